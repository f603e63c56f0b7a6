#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "unfold/errors.hpp"
#include "unfold/optim.hpp"

namespace unfold {

// Checkpoints are a JSON manifest (<prefix>.json) plus a raw little-endian
// float64 blob (<prefix>.bin). The manifest lists {name, shape, dtype,
// nonneg, offset} per group and carries a free-form "meta" object for model
// metadata (K, eta, nu, ...).

inline void save_params(const std::string& prefix, const ParamVector& p,
                        const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format"] = "unfold-checkpoint-v1";
  manifest["meta"] = meta;
  manifest["blob"] = std::filesystem::path(prefix + ".bin").filename().string();
  auto& groups = manifest["groups"] = nlohmann::json::array();
  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw StateError("cannot write " + prefix + ".bin");
  std::uint64_t offset = 0;
  for (const auto& g : p.groups) {
    groups.push_back({{"name", g.name},
                      {"shape", g.value.shape},
                      {"dtype", "float64"},
                      {"nonneg", g.nonneg},
                      {"offset", offset}});
    // doubles are IEEE-754 and the targets are little-endian
    blob.write(reinterpret_cast<const char*>(g.value.data()),
               static_cast<std::streamsize>(g.value.size() * sizeof(double)));
    offset += g.value.size() * sizeof(double);
  }
  std::ofstream mf(prefix + ".json");
  mf << manifest.dump(2) << "\n";
}

inline ParamVector load_params(const std::string& prefix, nlohmann::json* meta = nullptr) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw StateError("missing checkpoint manifest: " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.value("format", "") != "unfold-checkpoint-v1")
    throw StateError("unrecognized checkpoint format in " + prefix + ".json");
  if (meta) *meta = manifest.value("meta", nlohmann::json::object());
  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw StateError("missing checkpoint blob: " + prefix + ".bin");
  ParamVector p;
  for (const auto& g : manifest.at("groups")) {
    std::vector<int> shape = g.at("shape").get<std::vector<int>>();
    if (g.value("dtype", "") != "float64") throw StateError("unsupported dtype in checkpoint");
    Tensor t(shape);
    blob.seekg(static_cast<std::streamoff>(g.at("offset").get<std::uint64_t>()));
    blob.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!blob) throw StateError("truncated checkpoint blob: " + prefix + ".bin");
    p.add(g.at("name").get<std::string>(), std::move(t), g.at("nonneg").get<bool>());
  }
  return p;
}

}  // namespace unfold
