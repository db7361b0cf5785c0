#pragma once

/**
 * Synthetic deductive grammar the toy model is trained on.
 *
 * Prompt:      <bos> A VERB B . who wins ?
 * Completion:  FILLER , A VERB B . CONN W wins . \boxed{ W } <eos>
 *
 * Every verb (a "family") has exactly one valid connective. After it the
 * winner W (A or B, fixed per family) follows deterministically. After any
 * other connective the continuation is a few random noise words and the
 * answer `none`, so exactly one connective yields the valid conclusion. The
 * filler slot is high-entropy but inert. "Trap" families see a specific wrong
 * connective more often than the valid one during training, so greedy
 * decoding commits to it.
 */

#include "pivot/rng.hpp"
#include "pivot/vocab.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace pivot {

struct GrammarFamily {
  std::string verb;
  std::string connective;
  bool first_wins = true;
  std::string trap;  // empty: no trap connective
};

struct ToyGrammarConfig {
  std::vector<std::string> entities{"alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"};
  std::vector<std::string> fillers{"okay", "right", "hmm", "look", "see"};
  std::vector<std::string> noise_words{"maybe", "perhaps", "not", "never", "all", "some", "two", "three"};
  std::vector<GrammarFamily> families{
      {"beats", "therefore", true, ""},
      {"trails", "however", false, "therefore"},
      {"mirrors", "similarly", true, ""},
      {"precedes", "then", false, "as a result"},
      {"guards", "unless", true, ""},
      {"outranks", "for example", false, ""},
  };
  /// Single-token connectives in the vocabulary (multi-word ones are one token).
  std::vector<std::string> connectives{
      "therefore", "however",     "similarly",   "then",         "unless",      "for example",
      "hence",     "thus",        "because",     "but",          "yet",         "although",
      "likewise",  "later",       "if",          "instead",      "moreover",    "indeed",
      "also",      "since",       "as a result", "in contrast",  "on the other hand",
      "finally",   "meanwhile",   "otherwise",   "nevertheless", "consequently", "accordingly",
      "whereas",   "specifically", "namely"};
  /// Two-token connective used only as noise ("even" + "if").
  std::string split_connective_head = "even";
  std::string split_connective_tail = "if";

  double p_correct_clean = 0.70;
  double p_correct_trap = 0.35;
  double p_trap = 0.45;
  int noise_min = 2;
  int noise_max = 4;
};

struct GrammarPrompt {
  std::string id;
  std::size_t family = 0;
  std::string first;
  std::string second;
};

class ToyGrammar {
 public:
  explicit ToyGrammar(ToyGrammarConfig config = {});

  const ToyGrammarConfig& config() const { return config_; }
  /// Word list in token-id order; `<bos>` is id 0 and `<eos>` id 1.
  std::vector<std::string> vocabulary_words() const;
  Vocabulary vocabulary() const { return Vocabulary::from_words(vocabulary_words()); }

  /// Every (family, ordered entity pair), in a fixed order.
  std::vector<GrammarPrompt> prompts() const;
  std::string prompt_text(const GrammarPrompt& p) const;
  std::string gold(const GrammarPrompt& p) const;
  const std::string& valid_connective(const GrammarPrompt& p) const;
  bool is_trap_family(const GrammarPrompt& p) const;

  /// Completion words before the pivot connective.
  std::vector<std::string> pivot_prefix(const GrammarPrompt& p, const std::string& filler) const;
  /// Completion words after the valid connective, ending in <eos>.
  std::vector<std::string> valid_tail(const GrammarPrompt& p) const;
  /// Connective phrases that lead to noise for this prompt.
  std::vector<std::string> noise_connectives(const GrammarPrompt& p) const;

  /// Oracle: the answer a completion produces when `connective` is used at the pivot.
  std::string answer_after(const GrammarPrompt& p, const std::string& connective) const;

  /// One training sequence (words, starting with <bos>), and the index of the
  /// first completion word.
  std::vector<std::string> sample_sequence(Rng& rng, std::size_t* completion_start = nullptr) const;

 private:
  ToyGrammarConfig config_;
};

}  // namespace pivot
