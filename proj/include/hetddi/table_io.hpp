#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hetddi/error.hpp"

namespace hetddi {

/// Formats a double with 9 significant digits (shortest form, no trailing
/// zero padding), the precision used by all exported tables.
std::string formatValue9(double v);

/// Embedding table: one `drug_id<TAB>v1<TAB>...<TAB>vN` row per drug,
/// values at 9 significant digits. Rows keep their given order.
void writeEmbeddingsTsv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<double>>>& rows);

/// Reads the table back; every row must have the same vector length.
std::vector<std::pair<std::string, std::vector<double>>> readEmbeddingsTsv(
    const std::string& path);

}  // namespace hetddi
