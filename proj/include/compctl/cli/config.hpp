#pragma once

#include "compctl/analysis/complexity.hpp"
#include "compctl/analysis/report.hpp"
#include "compctl/corpus/io.hpp"
#include "compctl/model/checkpoint.hpp"
#include "compctl/training/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace compctl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kNumericFailure = 3,
  kMissingInput = 4,
  kRefused = 5,
};

/// Invalid or inconsistent configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// A file or directory the command needs does not exist.
struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Output exists and belongs to a different configuration.
struct Refused : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Default experiment document; every key a config file may set appears here.
inline json default_config() {
  const model::ModelConfig m = model::ModelConfig::small(0.5);
  const training::TrainConfig t;
  json j;
  j["name"] = "experiment";
  j["output_dir"] = "runs/experiment";
  j["model"] = {{"n_layers", m.n_layers}, {"n_heads", m.n_heads}, {"d_model", m.d_model},
                {"d_ffn", m.d_ffn},       {"init_rate", m.init_rate}};
  j["train"] = training::to_json(t);
  j["data"] = {{"n_train", 100000},       {"n_id_test", 10000},         {"n_ood_test", 10000},
               {"perturbation_k", 0},     {"pair_policy", "hold_out"}};
  j["analysis"] = {{"reports", json::array({"condensation", "stable-rank", "embedding-pca", "mask-pair", "mask-anchor"})},
                   {"n_per_pair", 50},
                   {"samples_per_combo", 2},
                   {"seed", 0},
                   {"svg", true}};
  j["sweep"] = {{"gammas", {0.3, 0.5, 0.65, 0.8}}, {"weight_decays", {0.01}}, {"seeds", {0, 1, 2}}};
  j["complexity"] = {{"k_values", {0, 2, 4, 6}}, {"gammas", {0.3, 0.8}}, {"trials", 3},
                     {"kind", "loss"},           {"threshold", 5e-2},    {"pair_threshold", 0.6},
                     {"seed", 0},                {"per_pair_k", 1},      {"per_pair_gammas", {0.8}}};
  return j;
}

/// Recursively overlays `patch` on `base`. Unknown keys are rejected so a
/// typo cannot silently fall back to a default.
inline void merge_into(json& base, const json& patch, const std::string& path = "") {
  if (!patch.is_object()) throw ConfigError("config: expected an object at '" + path + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

/// Applies `a.b.c=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &cfg;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("override: unknown key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override: '" + path + "' names a section, not a value");
  *node = value;
}

struct ExperimentConfig {
  json doc;  // complete, validated document

  [[nodiscard]] model::ModelConfig model() const {
    model::ModelConfig m = model::model_config_from_json(doc.at("model"));
    return m;
  }
  [[nodiscard]] training::TrainConfig train() const { return training::train_config_from_json(doc.at("train")); }
  [[nodiscard]] corpus::DatasetConfig data() const {
    const json& d = doc.at("data");
    corpus::DatasetConfig c;
    c.n_train = d.at("n_train").get<std::size_t>();
    c.n_id_test = d.at("n_id_test").get<std::size_t>();
    c.n_ood_test = d.at("n_ood_test").get<std::size_t>();
    c.policy = corpus::policy_from_name(d.at("pair_policy").get<std::string>());
    c.seed = training::data_seed(train().master_seed);
    return c;
  }
  [[nodiscard]] int perturbation_k() const { return doc.at("data").at("perturbation_k").get<int>(); }
  [[nodiscard]] corpus::MappingTable table() const {
    return corpus::perturb_mappings(perturbation_k(), training::data_seed(train().master_seed));
  }
  [[nodiscard]] fs::path output_dir() const { return doc.at("output_dir").get<std::string>(); }

  /// The sections that determine a training run, with sorted keys. The
  /// thread count is dropped: results do not depend on it.
  [[nodiscard]] std::string canonical() const {
    json c = {{"model", doc.at("model")}, {"train", doc.at("train")}, {"data", doc.at("data")}};
    c["train"].erase("threads");
    return c.dump();
  }
  [[nodiscard]] std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(compctl::detail::fnv1a64(canonical())));
    return buf;
  }
};

/// Validates everything the commands will later rely on.
inline ExperimentConfig make_config(json doc) {
  ExperimentConfig c{std::move(doc)};
  try {
    const auto m = c.model();
    if (m.vocab_size != corpus::kVocabSize || m.seq_len != corpus::kSeqLen) throw ConfigError("model: vocab/seq fixed");
    (void)c.train();
    const auto d = c.data();
    if (d.n_train == 0 || d.n_id_test == 0 || d.n_ood_test == 0) throw ConfigError("data: sizes must be positive");
    const int k = c.perturbation_k();
    if (k < 0 || k > 6) throw ConfigError("data.perturbation_k must lie in [0, 6]");
    for (const auto& r : c.doc.at("analysis").at("reports")) analysis::report_from_name(r.get<std::string>());
    if (c.output_dir().empty()) throw ConfigError("output_dir must be set");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

/// default_config() overlaid with the file (if any), then the overrides.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw MissingInput("config file not found: " + path);
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    merge_into(doc, file);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return make_config(std::move(doc));
}

/// Relative output paths are resolved against $COMPCTL_OUT when it is set.
inline fs::path resolve_output(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("COMPCTL_OUT"); root != nullptr && *root != '\0') return fs::path(root) / p;
  return p;
}

}  // namespace compctl::cli
