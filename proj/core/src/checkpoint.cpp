#include "graspsim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace grasp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  std::uint32_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error("checkpoint " + path + ": truncated file");
  return v;
}

}  // namespace

void save_gdnn(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint " + path + ": cannot open for writing");
  f.write("GDNN", 4);
  put_u32(f, kCheckpointVersion);
  put_u32(f, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put_u32(f, static_cast<std::uint32_t>(a.name.size()));
    f.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_u32(f, static_cast<std::uint32_t>(a.dims.size()));
    std::size_t numel = 1;
    for (int d : a.dims) {
      put_u32(f, static_cast<std::uint32_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    if (numel != a.data.size())
      throw std::runtime_error("checkpoint " + path + ": array " + a.name +
                               " data length does not match its dims");
    f.write(reinterpret_cast<const char*>(a.data.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
  }
  if (!f) throw std::runtime_error("checkpoint " + path + ": write failed");
}

std::vector<NamedArray> load_gdnn(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint " + path + ": cannot open");
  char magic[4] = {};
  if (!f.read(magic, 4) || std::memcmp(magic, "GDNN", 4) != 0)
    throw std::runtime_error("checkpoint " + path + ": bad magic, not a GDNN file");
  const std::uint32_t version = get_u32(f, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path + ": unsupported format version " +
                             std::to_string(version));
  const std::uint32_t count = get_u32(f, path);
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint32_t name_len = get_u32(f, path);
    a.name.resize(name_len);
    if (!f.read(a.name.data(), name_len))
      throw std::runtime_error("checkpoint " + path + ": truncated file");
    const std::uint32_t rank = get_u32(f, path);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = get_u32(f, path);
      if (dim == 0)
        throw std::runtime_error("checkpoint " + path + ": zero dim in " + a.name);
      a.dims.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    a.data.resize(numel);
    if (!f.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(numel * sizeof(float))))
      throw std::runtime_error("checkpoint " + path + ": truncated file");
    arrays.push_back(std::move(a));
  }
  return arrays;
}

}  // namespace grasp
