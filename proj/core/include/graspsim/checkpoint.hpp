#pragma once

// Network checkpoint file format ("GDNN"):
//   magic "GDNN" (4 bytes)
//   format version          u32
//   parameter array count   u32
//   per array:
//     name length           u32, then UTF-8 name bytes
//     rank                  u32, then one u32 per dim
//     data                  32-bit IEEE-754 little-endian values, row-major
// All integers little-endian.

#include <cstdint>
#include <string>
#include <vector>

#include "graspsim/graph.hpp"

namespace grasp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<int> dims;
  std::vector<float> data;
};

void save_gdnn(const std::string& path, const std::vector<NamedArray>& arrays);

// Throws std::runtime_error on bad magic, unsupported version, or a
// truncated/corrupt file.
std::vector<NamedArray> load_gdnn(const std::string& path);

inline void save_checkpoint(const std::string& path, const Graph<float>& g) {
  std::vector<NamedArray> arrays;
  for (const auto* p : g.params())
    arrays.push_back({p->name, p->shape, p->val});
  save_gdnn(path, arrays);
}

// Loads parameters by name; every graph parameter must be present with a
// matching shape.
inline void load_checkpoint(const std::string& path, Graph<float>& g) {
  const auto arrays = load_gdnn(path);
  for (auto* p : g.params()) {
    const NamedArray* found = nullptr;
    for (const auto& a : arrays)
      if (a.name == p->name) {
        found = &a;
        break;
      }
    if (!found)
      throw std::runtime_error("checkpoint " + path + ": missing parameter " + p->name);
    if (found->dims != p->shape)
      throw std::runtime_error("checkpoint " + path + ": parameter " + p->name +
                               " has shape " + shape_string(found->dims) +
                               ", expected " + shape_string(p->shape));
    p->val = found->data;
  }
}

}  // namespace grasp
