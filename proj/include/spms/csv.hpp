#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spms {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Reads a CSV file with a required header line. Returns rows of string cells.
// Lines starting with '#' and empty lines are skipped.
inline std::vector<std::vector<std::string>> read_csv(
    const std::string& path, const std::string& expected_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  bool header_seen = false;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != expected_header)
        throw std::runtime_error(path + ": expected header '" +
                                 expected_header + "', got '" + line + "'");
      header_seen = true;
      continue;
    }
    rows.push_back(split_csv_line(line));
  }
  if (!header_seen) throw std::runtime_error(path + ": missing header");
  return rows;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open " + path);
    out_.precision(17);
    out_ << header << "\n";
  }
  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, out_ << cells), ...);
    out_ << "\n";
  }
  void comment(const std::string& text) { out_ << "# " << text << "\n"; }

 private:
  std::ofstream out_;
};

}  // namespace spms
