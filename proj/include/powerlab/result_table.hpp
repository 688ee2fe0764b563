#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace powerlab {

/// 17 significant digits, so doubles round-trip exactly.
std::string format_double(double value);

/// Fixed-schema table written as CSV (header on line 1, LF endings).
class ResultTable {
 public:
  using Cell = std::variant<std::int64_t, double, std::string>;

  ResultTable(std::string name, std::vector<std::string> columns);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<Cell>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  void add_row(std::vector<Cell> row);
  std::size_t column_index(std::string_view column) const;
  /// Numeric cell (integers are widened).
  double number(std::size_t row, std::string_view column) const;
  std::string text(std::size_t row, std::string_view column) const;

  std::string header() const;
  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::string name_;
  std::vector<std::string> columns_;
  std::vector<std::vector<Cell>> rows_;
};

}  // namespace powerlab
