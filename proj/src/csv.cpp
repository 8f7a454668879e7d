#include "aufa/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "aufa/error.hpp"

namespace aufa {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Matrix read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t end = line.find(',', start);
      std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      cell = first == std::string::npos ? "" : cell.substr(first, last - first + 1);
      double v = 0.0;
      const char* b = cell.data();
      const char* e = b + cell.size();
      if (!cell.empty() && *b == '+') ++b;
      auto res = std::from_chars(b, e, v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != e) {
        throw Error(ErrorKind::NonNumeric, path.string() + ":" + std::to_string(rows + 1) +
                                               ": non-numeric cell '" + cell + "'");
      }
      values.push_back(v);
      ++count;
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw Error(ErrorKind::RaggedRows, path.string() + ":" + std::to_string(rows + 1) + ": row has " +
                                             std::to_string(count) + " columns, expected " +
                                             std::to_string(cols));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

void write_csv_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

}  // namespace aufa
