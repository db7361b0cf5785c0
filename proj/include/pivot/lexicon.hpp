#pragma once

/**
 * Logical-connective lexicon and streaming suffix matcher.
 *
 * The lexicon groups discourse connectives into ten relation classes. Matching
 * runs over the detokenized text of the most recent tokens of a decoding
 * stream: the longest phrase that ends exactly at the end of the (normalized)
 * text and starts on a word boundary wins.
 *
 * Lexicon file format: one `[ClassName]` header per section followed by one
 * phrase per line. Blank lines and lines starting with `#` are ignored.
 */

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pivot {

enum class RelationClass {
  Conjunction,
  Alternative,
  Restatement,
  Instantiation,
  Contrast,
  Concession,
  Analogy,
  Temporal,
  Condition,
  Causal,
};

inline constexpr std::size_t kRelationClassCount = 10;

const std::array<RelationClass, kRelationClassCount>& all_relation_classes();
std::string_view to_string(RelationClass c);
std::optional<RelationClass> relation_class_from_string(std::string_view name);

struct ConnectivePhrase {
  std::string surface;
  RelationClass relation = RelationClass::Causal;

  std::size_t word_count() const;
  friend bool operator==(const ConnectivePhrase&, const ConnectivePhrase&) = default;
};

struct ConnectiveMatch {
  ConnectivePhrase phrase;
  std::size_t end_position = 0;  // index of the last covered token in the stream
  std::size_t token_span = 1;

  std::size_t start_position() const { return end_position + 1 - token_span; }
  friend bool operator==(const ConnectiveMatch&, const ConnectiveMatch&) = default;
};

/// Lowercase, trim, and collapse internal whitespace runs to single spaces.
std::string normalize_text(std::string_view text);

class ConnectiveLexicon {
 public:
  /// Throws ValidationError on duplicates, excluded tokens, or malformed phrases.
  explicit ConnectiveLexicon(std::vector<ConnectivePhrase> phrases);

  static ConnectiveLexicon builtin();
  static ConnectiveLexicon parse(std::string_view text);
  static ConnectiveLexicon load(const std::string& path);

  std::string serialize() const;

  const std::vector<ConnectivePhrase>& phrases() const { return phrases_; }
  std::size_t size() const { return phrases_.size(); }
  std::size_t max_phrase_words() const { return max_words_; }
  /// Tokens of look-back used by the streaming matcher.
  std::size_t window_tokens() const { return max_words_ + 2; }

  /// Lookup after normalization; nullptr when the text is not a member.
  const ConnectivePhrase* find(std::string_view text) const;
  bool contains(std::string_view text) const { return find(text) != nullptr; }

  std::vector<ConnectivePhrase> phrases_in(RelationClass c) const;

 private:
  std::vector<ConnectivePhrase> phrases_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::size_t max_words_ = 0;
};

bool same_class(const ConnectivePhrase& a, const ConnectivePhrase& b);

using Detokenizer = std::function<std::string(int)>;

/**
 * Longest lexicon phrase matching the suffix of the detokenized window of the
 * last `lexicon.window_tokens()` tokens. The returned end_position is
 * `recent_tokens.size() - 1`; token_span counts the tokens overlapping the
 * phrase text.
 */
std::optional<ConnectiveMatch> match_suffix(std::span<const int> recent_tokens,
                                            const Detokenizer& detokenize,
                                            const ConnectiveLexicon& lexicon);

/**
 * Streaming annotation of a whole token sequence. Matches are reported at
 * their end token; a later match whose span overlaps an earlier one replaces
 * it (e.g. "rather" is superseded by "rather than"). Only tokens at index
 * >= first_index may be covered by a match.
 */
std::vector<ConnectiveMatch> annotate_connectives(std::span<const int> tokens,
                                                  const Detokenizer& detokenize,
                                                  const ConnectiveLexicon& lexicon,
                                                  std::size_t first_index = 0);

}  // namespace pivot
