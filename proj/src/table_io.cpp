#include "hetddi/table_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace hetddi {

std::string formatValue9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void writeEmbeddingsTsv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& [id, vec] : rows) {
    os << id;
    for (double v : vec) os << '\t' << formatValue9(v);
    os << '\n';
  }
  if (!os) throw IoError("write to '" + path + "' failed");
}

std::vector<std::pair<std::string, std::vector<double>>> readEmbeddingsTsv(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  std::string line;
  int lineNo = 0;
  std::size_t width = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    if (!std::getline(ss, id, '\t') || id.empty()) {
      throw ParseError("embedding table: missing id", lineNo, 1);
    }
    std::vector<double> vec;
    std::string cell;
    while (std::getline(ss, cell, '\t')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        vec.push_back(v);
      } catch (const std::exception&) {
        throw ParseError("embedding table: bad number '" + cell + "'", lineNo,
                         1);
      }
    }
    if (vec.empty()) {
      throw ParseError("embedding table: row has no values", lineNo, 1);
    }
    if (width == 0) {
      width = vec.size();
    } else if (vec.size() != width) {
      throw ParseError("embedding table: row width " +
                           std::to_string(vec.size()) + " != " +
                           std::to_string(width),
                       lineNo, 1);
    }
    rows.emplace_back(std::move(id), std::move(vec));
  }
  return rows;
}

}  // namespace hetddi
