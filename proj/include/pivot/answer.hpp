#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace pivot {

/// Contents of the last `\boxed{...}` (or `/boxed{...}`) span, trimmed.
std::optional<std::string> extract_boxed_answer(std::string_view text);

/// Case-insensitive exact match of the last boxed span against `gold` after
/// trimming; false when there is no boxed span.
bool check_answer(std::string_view output_text, std::string_view gold);

}  // namespace pivot
