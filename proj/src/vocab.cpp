#include "pivot/vocab.hpp"

#include "pivot/error.hpp"
#include "pivot/lexicon.hpp"

#include <algorithm>
#include <sstream>

namespace pivot {

Vocabulary::Vocabulary(std::vector<std::string> pieces, TokenId bos, TokenId eos)
    : pieces_(std::move(pieces)), bos_(bos), eos_(eos) {
  const auto n = static_cast<TokenId>(pieces_.size());
  if (bos < 0 || bos >= n || eos < 0 || eos >= n) {
    throw ValidationError("vocabulary: bos/eos id out of range");
  }
  for (TokenId id = 0; id < n; ++id) {
    if (is_special(id)) continue;
    const std::string w = normalize_text(pieces_[static_cast<std::size_t>(id)]);
    if (w.empty()) continue;
    by_word_.emplace(w, id);
    max_token_words_ = std::max(max_token_words_,
                                static_cast<std::size_t>(std::count(w.begin(), w.end(), ' ')) + 1);
  }
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  std::vector<std::string> pieces;
  std::optional<TokenId> bos;
  std::optional<TokenId> eos;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (words[i] == "<bos>") {
      bos = id;
      pieces.emplace_back();
    } else if (words[i] == "<eos>") {
      eos = id;
      pieces.emplace_back();
    } else {
      pieces.push_back(" " + words[i]);
    }
  }
  if (!bos || !eos) throw ValidationError("vocabulary must contain <bos> and <eos>");
  return Vocabulary(std::move(pieces), *bos, *eos);
}

std::string Vocabulary::word(TokenId id) const {
  if (id == bos_) return "<bos>";
  if (id == eos_) return "<eos>";
  return normalize_text(piece(id));
}

std::optional<TokenId> Vocabulary::find_word(std::string_view word) const {
  if (word == "<bos>") return bos_;
  if (word == "<eos>") return eos_;
  auto it = by_word_.find(normalize_text(word));
  if (it == by_word_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);

  std::vector<TokenId> out;
  std::size_t i = 0;
  while (i < words.size()) {
    bool matched = false;
    for (std::size_t k = std::min(max_token_words_, words.size() - i); k >= 1; --k) {
      std::string joined = words[i];
      for (std::size_t j = 1; j < k; ++j) joined += " " + words[i + j];
      if (auto id = find_word(joined)) {
        out.push_back(*id);
        i += k;
        matched = true;
        break;
      }
    }
    if (!matched) throw ValidationError("unknown word for vocabulary: '" + words[i] + "'");
  }
  return out;
}

std::string Vocabulary::detokenize(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId id : ids) out += piece(id);
  const auto b = out.find_first_not_of(' ');
  return b == std::string::npos ? std::string() : out.substr(b);
}

}  // namespace pivot
