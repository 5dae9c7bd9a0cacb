#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace cddpc::csv {

/// Reads one RFC-4180 record. Quoted fields may contain commas, doubled
/// quotes and line breaks. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields);

/// Quotes the field only when it contains a comma, quote or line break.
std::string escape(std::string_view field);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double value);

}  // namespace cddpc::csv
