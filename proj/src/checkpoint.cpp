#include "hetddi/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace hetddi {

namespace {

constexpr char kMagic[4] = {'H', 'D', 'C', '1'};

void putU32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void putU64(std::ostream& os, std::uint64_t v) {
  putU32(os, static_cast<std::uint32_t>(v & 0xffffffffull));
  putU32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t getU32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("checkpoint truncated");
  }
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t getU64(std::istream& is) {
  const std::uint64_t lo = getU32(is);
  const std::uint64_t hi = getU32(is);
  return lo | (hi << 32);
}

}  // namespace

void saveCheckpoint(const std::string& path,
                    const std::vector<NamedArray>& arrays,
                    CheckpointDtype dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  putU32(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    std::int64_t n = 1;
    for (int d : a.shape) {
      if (d <= 0) {
        throw DimensionError("checkpoint array '" + a.name +
                             "' has a non-positive extent");
      }
      n *= d;
    }
    if (n != static_cast<std::int64_t>(a.data.size())) {
      throw DimensionError("checkpoint array '" + a.name +
                           "' shape does not match its data length");
    }
    putU32(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    os.put(static_cast<char>(dtype));
    putU32(os, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) putU32(os, static_cast<std::uint32_t>(d));
    if (dtype == CheckpointDtype::F64) {
      for (double v : a.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        putU64(os, bits);
      }
    } else {
      for (double v : a.data) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        putU32(os, bits);
      }
    }
  }
  if (!os) throw IoError("write to '" + path + "' failed");
}

std::vector<NamedArray> loadCheckpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("'" + path + "' is not a checkpoint file (bad magic)");
  }
  const std::uint32_t count = getU32(is);
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint32_t nameLen = getU32(is);
    a.name.resize(nameLen);
    if (!is.read(a.name.data(), nameLen)) throw IoError("checkpoint truncated");
    const int dtypeByte = is.get();
    if (dtypeByte != 0 && dtypeByte != 1) {
      throw IoError("checkpoint array '" + a.name + "' has unknown dtype tag " +
                    std::to_string(dtypeByte));
    }
    const std::uint32_t ndim = getU32(is);
    std::int64_t n = 1;
    a.shape.resize(ndim);
    for (auto& d : a.shape) {
      d = static_cast<int>(getU32(is));
      if (d <= 0) {
        throw IoError("checkpoint array '" + a.name +
                      "' has a non-positive extent");
      }
      n *= d;
    }
    a.data.resize(static_cast<std::size_t>(n));
    if (dtypeByte == 1) {
      for (auto& v : a.data) {
        const std::uint64_t bits = getU64(is);
        std::memcpy(&v, &bits, 8);
      }
    } else {
      for (auto& v : a.data) {
        const std::uint32_t bits = getU32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
      }
    }
    arrays.push_back(std::move(a));
  }
  return arrays;
}

}  // namespace hetddi
