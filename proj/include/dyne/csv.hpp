#pragma once

#include <charconv>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyne {

// Shortest round-trip decimal form, so repeated runs produce identical bytes.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// CSV with '#' comment header lines followed by one column-name row.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header_comments,
            const std::vector<std::string>& columns)
      : os_(path, std::ios::binary) {
    if (!os_) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
    for (const std::string& c : header_comments) os_ << "# " << c << "\n";
    for (size_t i = 0; i < columns.size(); ++i) os_ << (i ? "," : "") << columns[i];
    os_ << "\n";
  }

  void row(std::span<const double> values) {
    for (size_t i = 0; i < values.size(); ++i) os_ << (i ? "," : "") << format_double(values[i]);
    os_ << "\n";
  }

  void row(std::initializer_list<double> values) { row(std::span<const double>(values.begin(), values.size())); }

  void raw_row(const std::string& line) { os_ << line << "\n"; }

  void close() { os_.close(); }

 private:
  std::ofstream os_;
};

}  // namespace dyne
