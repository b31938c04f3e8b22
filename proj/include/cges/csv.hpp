#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace cges::csv {

/// Shortest round-trip decimal form; stable across runs.
std::string format_double(double value);

/// Quotes a field when it contains a comma, quote, or newline.
std::string escape(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> split_row(std::string_view line);

} // namespace cges::csv
