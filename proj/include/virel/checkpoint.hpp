#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "virel/dataset.hpp"
#include "virel/tensor.hpp"

namespace virel {

// Checkpoint file: one JSON header line naming the parameters in registration
// order, then the concatenated values as little-endian 32-bit floats.
template <class T>
void save_checkpoint(const ParamStore<T>& store,
                     const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["schema_version"] = 1;
  auto params = nlohmann::ordered_json::array();
  for (const auto& p : store.params)
    params.push_back({{"name", p.name}, {"shape", p.shape}});
  header["params"] = std::move(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f << header.dump() << "\n";
  for (const auto& p : store.params) {
    for (T x : p.data) {
      float v = static_cast<float>(x);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  if (!f) throw DataError("checkpoint write failure " + path.string());
}

template <class T>
void load_checkpoint(ParamStore<T>& store, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(f, line);
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("schema_version", 0) != 1)
    throw DataError("checkpoint schema_version mismatch");
  const auto& params = header["params"];
  if (params.size() != store.params.size())
    throw DataError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < store.params.size(); ++i) {
    auto& p = store.params[i];
    if (params[i]["name"].get<std::string>() != p.name ||
        params[i]["shape"].get<Shape>() != p.shape)
      throw DataError("checkpoint layout mismatch at " + p.name);
    for (auto& x : p.data) {
      float v;
      f.read(reinterpret_cast<char*>(&v), 4);
      x = static_cast<T>(v);
    }
  }
  if (!f) throw DataError("checkpoint truncated " + path.string());
}

}  // namespace virel
