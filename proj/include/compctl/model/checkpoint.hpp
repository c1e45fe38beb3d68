#pragma once

#include "compctl/model/params.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <span>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace compctl::model {

namespace fs = std::filesystem;

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},       {"d_model", c.d_model},
          {"d_ffn", c.d_ffn},       {"vocab_size", c.vocab_size}, {"seq_len", c.seq_len},
          {"init_rate", c.init_rate}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.init_rate = j.value("init_rate", c.init_rate);
  c.validate();
  return c;
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline void write_f64_le(std::ostream& out, std::span<const double> data) {
  std::vector<unsigned char> buf(data.size() * 8);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
    for (int b = 0; b < 8; ++b) buf[i * 8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void read_f64_le(std::istream& in, std::span<double> data) {
  std::vector<unsigned char> buf(data.size() * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
    data[i] = std::bit_cast<double>(bits);
  }
}

/// Writes the tensors back to back; returns their manifest entries.
inline nlohmann::ordered_json write_blob(const fs::path& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    write_f64_le(out, t->data());
    entries.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"bytes", t->size() * 8}});
    offset += t->size() * 8;
  }
  return entries;
}

}  // namespace detail

/// Checkpoint directory: manifest.json + weights.bin (little-endian IEEE-754
/// doubles, tensors concatenated row-major in manifest order). Optimizer
/// moments, when given, go to optimizer.bin with their own listing.
inline void save_checkpoint(const fs::path& dir, const ModelParams& params, nlohmann::ordered_json meta,
                            const std::vector<NamedTensor>& optimizer = {}) {
  fs::create_directories(dir);
  std::vector<std::pair<std::string, const Tensor*>> list;
  params.for_each([&](const TensorSlot& s, const Tensor& t) { list.emplace_back(s.name, &t); });
  nlohmann::ordered_json manifest;
  manifest["format"] = "compctl-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "f64";
  manifest["byte_order"] = "little";
  manifest["model_config"] = to_json(params.config);
  manifest["init_rate"] = params.config.init_rate;
  for (auto& [k, v] : meta.items()) manifest[k] = v;
  manifest["tensors"] = detail::write_blob(dir / "weights.bin", list);
  if (!optimizer.empty()) {
    std::vector<std::pair<std::string, const Tensor*>> opt;
    for (const NamedTensor& n : optimizer) opt.emplace_back(n.name, &n.tensor);
    manifest["optimizer_tensors"] = detail::write_blob(dir / "optimizer.bin", opt);
  }
  std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
}

struct LoadedCheckpoint {
  ModelParams params;
  nlohmann::json manifest;
  std::vector<NamedTensor> optimizer;
};

inline LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  std::ifstream min(dir / "manifest.json");
  if (!min) throw std::runtime_error("missing checkpoint manifest in " + dir.string());
  LoadedCheckpoint out;
  out.manifest = nlohmann::json::parse(min);
  if (out.manifest.value("format", "") != "compctl-checkpoint" || out.manifest.value("dtype", "") != "f64") {
    throw std::runtime_error("not a compctl f64 checkpoint: " + dir.string());
  }
  out.params = zero_params(model_config_from_json(out.manifest.at("model_config")));

  std::ifstream win(dir / "weights.bin", std::ios::binary);
  if (!win) throw std::runtime_error("missing weights.bin in " + dir.string());
  const auto& entries = out.manifest.at("tensors");
  std::size_t idx = 0;
  out.params.for_each([&](const TensorSlot& s, Tensor& t) {
    if (idx >= entries.size()) throw std::runtime_error("checkpoint: manifest lists too few tensors");
    const auto& e = entries[idx++];
    if (e.at("name").get<std::string>() != s.name ||
        e.at("shape").get<std::vector<std::size_t>>() != t.shape()) {
      throw std::runtime_error("checkpoint: tensor " + s.name + " does not match the model config");
    }
    win.seekg(static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    detail::read_f64_le(win, t.data());
  });
  if (idx != entries.size()) throw std::runtime_error("checkpoint: manifest lists extra tensors");

  if (out.manifest.contains("optimizer_tensors")) {
    std::ifstream oin(dir / "optimizer.bin", std::ios::binary);
    if (!oin) throw std::runtime_error("missing optimizer.bin in " + dir.string());
    for (const auto& e : out.manifest.at("optimizer_tensors")) {
      NamedTensor n{e.at("name").get<std::string>(), Tensor(e.at("shape").get<std::vector<std::size_t>>())};
      oin.seekg(static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
      detail::read_f64_le(oin, n.tensor.data());
      out.optimizer.push_back(std::move(n));
    }
  }
  return out;
}

}  // namespace compctl::model
