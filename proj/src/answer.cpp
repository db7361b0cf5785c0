#include "pivot/answer.hpp"

#include <algorithm>
#include <cctype>

namespace pivot {
namespace {

std::string trim_lower(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::optional<std::string> extract_boxed_answer(std::string_view text) {
  std::optional<std::size_t> open;
  for (std::string_view marker : {"\\boxed{", "/boxed{"}) {
    const std::size_t at = text.rfind(marker);
    if (at != std::string_view::npos && (!open || at + marker.size() > *open)) open = at + marker.size();
  }
  if (!open) return std::nullopt;
  // Balanced braces inside the box are kept.
  int depth = 1;
  for (std::size_t i = *open; i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) {
      const std::string_view body = text.substr(*open, i - *open);
      std::size_t b = 0;
      std::size_t e = body.size();
      while (b < e && std::isspace(static_cast<unsigned char>(body[b]))) ++b;
      while (e > b && std::isspace(static_cast<unsigned char>(body[e - 1]))) --e;
      return std::string(body.substr(b, e - b));
    }
  }
  return std::nullopt;
}

bool check_answer(std::string_view output_text, std::string_view gold) {
  const auto got = extract_boxed_answer(output_text);
  if (!got) return false;
  return trim_lower(*got) == trim_lower(gold);
}

}  // namespace pivot
