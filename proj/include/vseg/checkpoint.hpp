#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "vseg/errors.hpp"
#include "vseg/vnet.hpp"

namespace vseg {

inline void to_json(nlohmann::ordered_json& j, const VNetConfig& c) {
  j = nlohmann::ordered_json{{"levels", c.levels},
                             {"base_channels", c.base_channels},
                             {"kernel", c.kernel},
                             {"convs_per_level", c.convs_per_level},
                             {"dropout_p", c.dropout_p},
                             {"dropout_sites", to_string(c.dropout_sites)},
                             {"in_channels", c.in_channels},
                             {"out_channels", c.out_channels}};
}

template <class Json>
VNetConfig vnet_config_from_json(const Json& j) {
  VNetConfig c;
  for (const auto& [key, _] : j.items()) {
    static const char* known[] = {"levels", "base_channels", "kernel", "convs_per_level", "dropout_p",
                                  "dropout_sites", "in_channels", "out_channels"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known))
      throw ConfigError("model: unknown key '" + key + "'");
  }
  try {
    c.levels = j.value("levels", c.levels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.kernel = j.value("kernel", c.kernel);
    c.convs_per_level = j.value("convs_per_level", c.convs_per_level);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.dropout_sites = dropout_sites_from_string(j.value("dropout_sites", std::string(to_string(c.dropout_sites))));
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  c.validate();
  return c;
}

inline constexpr const char* kCheckpointFormat = "vseg-checkpoint/1";

/// Training state stored alongside the weights.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
};

inline std::filesystem::path checkpoint_blob_path(std::filesystem::path manifest) {
  return manifest.replace_extension(".bin");
}

/// Writes `<name>.json` (manifest) and `<name>.bin` (float32 blob, tensors
/// in name order).
template <class T>
void save_checkpoint(const ModelParameters<T>& params, const CheckpointMeta& meta,
                     const std::filesystem::path& manifest_path) {
  nlohmann::ordered_json m;
  m["format"] = kCheckpointFormat;
  m["config"] = params.config;
  m["seed"] = meta.seed;
  m["epoch"] = meta.epoch;
  m["step"] = meta.step;
  m["lr"] = meta.lr;
  m["scheduler"] = {{"best_val_loss", std::isfinite(meta.best_val_loss) ? nlohmann::ordered_json(meta.best_val_loss)
                                                                        : nlohmann::ordered_json(nullptr)},
                    {"epochs_since_improvement", meta.epochs_since_improvement}};
  std::vector<float> blob;
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params.tensors) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size() * sizeof(float)}});
    for (T v : t.values()) blob.push_back(static_cast<float>(v));
  }
  m["tensors"] = tensors;
  const auto blob_path = checkpoint_blob_path(manifest_path);
  m["blob"] = blob_path.filename().string();
  m["blob_bytes"] = blob.size() * sizeof(float);
  if (manifest_path.has_parent_path()) std::filesystem::create_directories(manifest_path.parent_path());
  {
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw CheckpointError("cannot write checkpoint blob " + blob_path.string());
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  out << m.dump(2) << '\n';
  if (!out) throw CheckpointError("cannot write checkpoint manifest " + manifest_path.string());
}

template <class T>
struct LoadedCheckpoint {
  ModelParameters<T> params;
  CheckpointMeta meta;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw CheckpointError("cannot open checkpoint " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(manifest_path.string() + ": " + e.what());
  }
  LoadedCheckpoint<T> out;
  try {
    if (m.at("format").get<std::string>() != kCheckpointFormat)
      throw CheckpointError(manifest_path.string() + ": unsupported checkpoint format '" + m.at("format").get<std::string>() + "'");
    out.params.config = vnet_config_from_json(m.at("config"));
    out.meta.seed = m.at("seed").get<std::uint64_t>();
    out.meta.epoch = m.at("epoch").get<std::size_t>();
    out.meta.step = m.at("step").get<std::size_t>();
    out.meta.lr = m.at("lr").get<double>();
    const auto& sched = m.at("scheduler");
    if (!sched.at("best_val_loss").is_null()) out.meta.best_val_loss = sched.at("best_val_loss").get<double>();
    out.meta.epochs_since_improvement = sched.at("epochs_since_improvement").get<std::size_t>();

    const auto blob_path = manifest_path.parent_path() / m.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw CheckpointError("cannot open checkpoint blob " + blob_path.string());
    const std::vector<char> bytes{std::istreambuf_iterator<char>(bin), {}};
    if (bytes.size() != m.at("blob_bytes").get<std::size_t>()) {
      throw CheckpointError(blob_path.string() + ": expected " + std::to_string(m.at("blob_bytes").get<std::size_t>()) +
                            " bytes, found " + std::to_string(bytes.size()));
    }
    for (const auto& t : m.at("tensors")) {
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t offset = t.at("offset").get<std::size_t>(), n = numel(shape);
      if (offset + n * sizeof(float) > bytes.size()) throw CheckpointError("tensor '" + t.at("name").get<std::string>() + "' overruns blob");
      std::vector<float> f(n);
      std::memcpy(f.data(), bytes.data() + offset, n * sizeof(float));
      out.params.tensors.emplace(t.at("name").get<std::string>(), Tensor<T>(shape, std::vector<T>(f.begin(), f.end()), true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(manifest_path.string() + ": " + e.what());
  }
  const auto reference = build<T>(out.params.config, 0);
  for (const auto& [name, t] : reference.tensors) {
    auto it = out.params.tensors.find(name);
    if (it == out.params.tensors.end() || it->second.shape() != t.shape())
      throw CheckpointError(manifest_path.string() + ": tensor '" + name + "' missing or misshapen for the stored config");
  }
  if (reference.tensors.size() != out.params.tensors.size())
    throw CheckpointError(manifest_path.string() + ": unexpected extra tensors");
  return out;
}

}  // namespace vseg
