#pragma once

#include <string>
#include <vector>

#include "hetddi/error.hpp"

namespace hetddi {

/// Storage precision for checkpoint payloads. F64 round-trips the in-memory
/// doubles bitwise; F32 halves the file at the cost of rounding.
enum class CheckpointDtype { F32 = 0, F64 = 1 };

/// One named array in a checkpoint (a parameter, or auxiliary state such as
/// batchnorm running statistics).
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

/// Binary container, little-endian throughout:
///   magic "HDC1" | u32 count
///   per array: u32 name_len | name bytes | u8 dtype | u32 ndim |
///              u32 extents[ndim] | row-major payload (f32 or f64)
void saveCheckpoint(const std::string& path,
                    const std::vector<NamedArray>& arrays,
                    CheckpointDtype dtype = CheckpointDtype::F64);

std::vector<NamedArray> loadCheckpoint(const std::string& path);

}  // namespace hetddi
