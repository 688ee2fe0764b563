#include "powerlab/result_table.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace powerlab {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

ResultTable::ResultTable(std::string name, std::vector<std::string> columns)
    : name_(std::move(name)), columns_(std::move(columns)) {
  if (columns_.empty()) throw std::invalid_argument("ResultTable: no columns");
}

void ResultTable::add_row(std::vector<Cell> row) {
  if (row.size() != columns_.size()) {
    throw std::invalid_argument("ResultTable " + name_ + ": row has " + std::to_string(row.size()) +
                                " cells, schema has " + std::to_string(columns_.size()));
  }
  rows_.push_back(std::move(row));
}

std::size_t ResultTable::column_index(std::string_view column) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i] == column) return i;
  }
  throw std::out_of_range("ResultTable " + name_ + ": no column " + std::string(column));
}

double ResultTable::number(std::size_t row, std::string_view column) const {
  const auto& cell = rows_.at(row).at(column_index(column));
  if (const auto* d = std::get_if<double>(&cell)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&cell)) return static_cast<double>(*i);
  throw std::invalid_argument("ResultTable " + name_ + ": column " + std::string(column) +
                              " is not numeric");
}

std::string ResultTable::text(std::size_t row, std::string_view column) const {
  const auto& cell = rows_.at(row).at(column_index(column));
  if (const auto* s = std::get_if<std::string>(&cell)) return *s;
  if (const auto* d = std::get_if<double>(&cell)) return format_double(*d);
  return std::to_string(std::get<std::int64_t>(cell));
}

std::string ResultTable::header() const {
  std::string out;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (i) out += ',';
    out += columns_[i];
  }
  return out;
}

void ResultTable::write_csv(std::ostream& out) const {
  out << header() << '\n';
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (c) out << ',';
      out << text(r, columns_[c]);
    }
    out << '\n';
  }
}

void ResultTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out);
}

}  // namespace powerlab
