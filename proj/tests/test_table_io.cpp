#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hetddi/table_io.hpp"

using namespace hetddi;

namespace {

std::filesystem::path tmpPath(const std::string& stem) {
  return std::filesystem::temp_directory_path() / stem;
}

void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  REQUIRE(static_cast<bool>(is));
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("values format at nine significant digits") {
  CHECK(formatValue9(0.0) == "0");
  CHECK(formatValue9(1.0) == "1");
  CHECK(formatValue9(-2.5) == "-2.5");
  CHECK(formatValue9(1.0 / 3.0) == "0.333333333");
  CHECK(formatValue9(123456789.0) == "123456789");
  CHECK(formatValue9(1234567890.0) == "1.23456789e+09");
  CHECK(formatValue9(0.1) == "0.1");
  CHECK(formatValue9(1e-12) == "1e-12");
}

TEST_CASE("embedding tables round-trip at format precision") {
  const auto path = tmpPath("emb_roundtrip.tsv");
  const std::vector<std::pair<std::string, std::vector<double>>> rows{
      {"aspirin", {0.5, -1.25, 1.0 / 3.0}},
      {"warfarin", {2.0, 0.0, -7.75}},
  };
  writeEmbeddingsTsv(path.string(), rows);
  const auto back = readEmbeddingsTsv(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "aspirin");
  CHECK(back[1].first == "warfarin");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(back[i].second.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(back[i].second[j] - rows[i].second[j]) <
            1e-8 * std::max(1.0, std::abs(rows[i].second[j])));
    }
  }
  // grid-representable values survive exactly
  CHECK(back[0].second[0] == 0.5);
  CHECK(back[1].second[2] == -7.75);
  std::filesystem::remove(path);
}

TEST_CASE("written tables are tab-separated with one row per drug") {
  const auto path = tmpPath("emb_layout.tsv");
  writeEmbeddingsTsv(path.string(), {{"d1", {1.0, 0.25}}});
  CHECK(slurp(path) == "d1\t1\t0.25\n");
  std::filesystem::remove(path);
}

TEST_CASE("table reader rejects malformed rows") {
  const auto path = tmpPath("emb_bad.tsv");

  CHECK_THROWS_AS(readEmbeddingsTsv("/nonexistent/emb.tsv"), IoError);

  spit(path, "d1\t1.0\t2.0\nd2\t3.0\n");  // ragged widths
  CHECK_THROWS_AS(readEmbeddingsTsv(path.string()), ParseError);

  spit(path, "d1\t1.0\tnotanumber\n");
  CHECK_THROWS_AS(readEmbeddingsTsv(path.string()), ParseError);

  spit(path, "d1\n");  // id with no values
  CHECK_THROWS_AS(readEmbeddingsTsv(path.string()), ParseError);
  std::filesystem::remove(path);
}
