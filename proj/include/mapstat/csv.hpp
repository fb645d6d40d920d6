#pragma once

// Deterministic CSV emission. All doubles go through the same %.17g
// formatting so identical results produce identical bytes.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mapstat/common.hpp"

namespace mapstat {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size())
      throw error("csv row width does not match header");
    rows_.push_back(std::move(cells));
  }

  // convenience: all-numeric row
  void add_numeric_row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(format_double(v));
    add_row(std::move(cells));
  }

  std::string str() const {
    std::string out;
    append_line(out, header_);
    for (const auto& r : rows_) append_line(out, r);
    return out;
  }

  void write_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw error("cannot open output file: " + path);
    os << str();
  }

 private:
  static void append_line(std::string& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace mapstat
