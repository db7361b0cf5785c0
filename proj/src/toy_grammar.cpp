#include "pivot/toy_grammar.hpp"

#include "pivot/error.hpp"

#include <algorithm>

namespace pivot {

ToyGrammar::ToyGrammar(ToyGrammarConfig config) : config_(std::move(config)) {
  const auto& c = config_;
  if (c.entities.size() < 2) throw ValidationError("toy grammar needs at least two entities");
  if (c.families.empty() || c.fillers.empty() || c.noise_words.empty()) {
    throw ValidationError("toy grammar needs families, fillers and noise words");
  }
  if (c.noise_min < 1 || c.noise_max < c.noise_min) throw ValidationError("toy grammar: bad noise length range");
  auto known = [&](const std::string& conn) {
    return std::find(c.connectives.begin(), c.connectives.end(), conn) != c.connectives.end();
  };
  for (const auto& f : c.families) {
    if (!known(f.connective)) throw ValidationError("family connective not in vocabulary: " + f.connective);
    if (!f.trap.empty() && (!known(f.trap) || f.trap == f.connective)) {
      throw ValidationError("invalid trap connective: " + f.trap);
    }
  }
}

std::vector<std::string> ToyGrammar::vocabulary_words() const {
  const auto& c = config_;
  std::vector<std::string> w{"<bos>", "<eos>", ".", ",", "?", "who", "wins", "\\boxed{", "}", "none"};
  auto append = [&](const std::vector<std::string>& xs) { w.insert(w.end(), xs.begin(), xs.end()); };
  append(c.entities);
  for (const auto& f : c.families) w.push_back(f.verb);
  append(c.fillers);
  append(c.noise_words);
  append(c.connectives);
  if (std::find(w.begin(), w.end(), c.split_connective_head) == w.end()) w.push_back(c.split_connective_head);
  if (std::find(w.begin(), w.end(), c.split_connective_tail) == w.end()) w.push_back(c.split_connective_tail);
  return w;
}

std::vector<GrammarPrompt> ToyGrammar::prompts() const {
  std::vector<GrammarPrompt> out;
  const auto& ents = config_.entities;
  for (std::size_t f = 0; f < config_.families.size(); ++f) {
    for (const auto& a : ents) {
      for (const auto& b : ents) {
        if (a == b) continue;
        out.push_back({"toy-" + config_.families[f].verb + "-" + a + "-" + b, f, a, b});
      }
    }
  }
  return out;
}

std::string ToyGrammar::prompt_text(const GrammarPrompt& p) const {
  return p.first + " " + config_.families.at(p.family).verb + " " + p.second + " . who wins ?";
}

std::string ToyGrammar::gold(const GrammarPrompt& p) const {
  return config_.families.at(p.family).first_wins ? p.first : p.second;
}

const std::string& ToyGrammar::valid_connective(const GrammarPrompt& p) const {
  return config_.families.at(p.family).connective;
}

bool ToyGrammar::is_trap_family(const GrammarPrompt& p) const {
  return !config_.families.at(p.family).trap.empty();
}

std::vector<std::string> ToyGrammar::pivot_prefix(const GrammarPrompt& p, const std::string& filler) const {
  return {filler, ",", p.first, config_.families.at(p.family).verb, p.second, "."};
}

std::vector<std::string> ToyGrammar::valid_tail(const GrammarPrompt& p) const {
  const std::string w = gold(p);
  return {w, "wins", ".", "\\boxed{", w, "}", "<eos>"};
}

std::vector<std::string> ToyGrammar::noise_connectives(const GrammarPrompt& p) const {
  std::vector<std::string> out;
  for (const auto& c : config_.connectives) {
    if (c != valid_connective(p)) out.push_back(c);
  }
  out.push_back(config_.split_connective_head + " " + config_.split_connective_tail);
  return out;
}

std::string ToyGrammar::answer_after(const GrammarPrompt& p, const std::string& connective) const {
  return connective == valid_connective(p) ? gold(p) : "none";
}

std::vector<std::string> ToyGrammar::sample_sequence(Rng& rng, std::size_t* completion_start) const {
  const auto& c = config_;
  const std::size_t f = rng.below(c.families.size());
  const std::size_t ia = rng.below(c.entities.size());
  std::size_t ib = rng.below(c.entities.size() - 1);
  if (ib >= ia) ++ib;
  const GrammarPrompt p{"", f, c.entities[ia], c.entities[ib]};
  const GrammarFamily& fam = c.families[f];

  std::vector<std::string> seq{"<bos>", p.first, fam.verb, p.second, ".", "who", "wins", "?"};
  if (completion_start) *completion_start = seq.size();
  const auto prefix = pivot_prefix(p, c.fillers[rng.below(c.fillers.size())]);
  seq.insert(seq.end(), prefix.begin(), prefix.end());

  const double u = rng.uniform();
  std::string conn;
  if (fam.trap.empty()) {
    conn = u < c.p_correct_clean ? fam.connective : "";
  } else if (u < c.p_correct_trap) {
    conn = fam.connective;
  } else if (u < c.p_correct_trap + c.p_trap) {
    conn = fam.trap;
  }
  if (conn.empty()) {
    const auto pool = noise_connectives(p);
    conn = pool[rng.below(pool.size())];
  }

  if (conn == fam.connective) {
    seq.push_back(conn);
    const auto tail = valid_tail(p);
    seq.insert(seq.end(), tail.begin(), tail.end());
    return seq;
  }
  if (conn == c.split_connective_head + " " + c.split_connective_tail) {
    seq.push_back(c.split_connective_head);
    seq.push_back(c.split_connective_tail);
  } else {
    seq.push_back(conn);
  }
  const auto span = static_cast<std::uint64_t>(c.noise_max - c.noise_min + 1);
  const int n_noise = c.noise_min + static_cast<int>(rng.below(span));
  for (int i = 0; i < n_noise; ++i) seq.push_back(c.noise_words[rng.below(c.noise_words.size())]);
  for (const char* w : {".", "\\boxed{", "none", "}", "<eos>"}) seq.emplace_back(w);
  return seq;
}

}  // namespace pivot
