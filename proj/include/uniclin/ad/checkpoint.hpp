#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniclin/ad/param_store.hpp"

namespace uniclin::ad {

// Flat archive of named tensors plus a JSON manifest.
//
// Layout, all integers little-endian u32, floats little-endian IEEE-754:
//   "UCKP" | version | manifest_len | manifest (UTF-8 JSON) | tensor_count |
//   repeated { name_len | name (UTF-8) | ndim | dims[ndim] | f32[numel] }
struct Archive {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  // Copies every tensor of `store` under "<prefix>/<name>".
  void put(const std::string& prefix, const ParamStore& store);
  // Loads "<prefix>/<name>" into each tensor of `store`; missing names or
  // shape mismatches are schema errors.
  void get(const std::string& prefix, ParamStore& store) const;
  bool has_prefix(const std::string& prefix) const;

  std::string serialize() const;
  static Archive deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

}  // namespace uniclin::ad
