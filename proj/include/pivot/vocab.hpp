#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pivot {

using TokenId = int;

/**
 * Token table shared by local and remote backends.
 *
 * Each token carries a detokenization piece. Word tokens use a leading-space
 * piece (" therefore"), so concatenating pieces reproduces the text; special
 * tokens have empty pieces.
 */
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> pieces, TokenId bos, TokenId eos);

  /// Word-level vocabulary: every entry gets a leading-space piece except
  /// `<bos>`/`<eos>`, which must be present.
  static Vocabulary from_words(const std::vector<std::string>& words);

  std::size_t size() const { return pieces_.size(); }
  const std::string& piece(TokenId id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  /// Piece without surrounding whitespace.
  std::string word(TokenId id) const;
  std::optional<TokenId> find_word(std::string_view word) const;
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  bool is_special(TokenId id) const { return id == bos_ || id == eos_; }

  /// Greedy longest-match over whitespace-separated words (multi-word tokens
  /// such as "as a result" are preferred). Throws ValidationError on unknown words.
  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<TokenId>& ids) const;

  const std::vector<std::string>& pieces() const { return pieces_; }

 private:
  std::vector<std::string> pieces_;
  std::map<std::string, TokenId, std::less<>> by_word_;
  std::size_t max_token_words_ = 1;
  TokenId bos_ = 0;
  TokenId eos_ = 0;
};

}  // namespace pivot
