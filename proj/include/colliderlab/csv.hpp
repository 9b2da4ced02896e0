#pragma once

// Minimal RFC 4180 tables: quoted fields may hold commas, quotes and
// newlines. Rows keep their 1-based source line for error messages.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace colliderlab::csv {

class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Row {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Index of the first header matching any of `names` (case-insensitive).
  std::optional<std::size_t> column(std::initializer_list<std::string_view> names) const;
};

Table parse(std::string_view text);
Table read_file(const std::string &path);

std::string escape(std::string_view field);
void write_row(std::ostream &out, const std::vector<std::string> &fields);

}  // namespace colliderlab::csv
