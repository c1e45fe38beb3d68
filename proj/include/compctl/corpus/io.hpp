#pragma once

#include "compctl/corpus/dataset.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace compctl::corpus {

namespace fs = std::filesystem;

inline std::string policy_name(PairPolicy p) {
  return p == PairPolicy::kAllPairs ? "all_pairs" : "hold_out";
}

inline PairPolicy policy_from_name(const std::string& s) {
  if (s == "all_pairs") return PairPolicy::kAllPairs;
  if (s == "hold_out") return PairPolicy::kHoldOut;
  throw std::invalid_argument("unknown pair policy '" + s + "'");
}

/// One JSONL record: {"tokens":[...],"key_pos":k,"pair":[id,id],"target":t}.
inline std::string example_to_jsonl(const Example& e) {
  std::ostringstream os;
  os << "{\"tokens\":[";
  for (int i = 0; i < kSeqLen; ++i) os << (i ? "," : "") << e.tokens[static_cast<std::size_t>(i)];
  os << "],\"key_pos\":" << e.key_pos << ",\"pair\":["
     << e.tokens[static_cast<std::size_t>(e.pair_pos)] << ","
     << e.tokens[static_cast<std::size_t>(e.pair_pos + 1)] << "],\"target\":" << e.target << "}";
  return os.str();
}

inline Example example_from_json(const nlohmann::json& j, Split split) {
  Example e;
  e.split = split;
  const auto& toks = j.at("tokens");
  if (!toks.is_array() || toks.size() != kSeqLen) throw std::invalid_argument("record: need 9 tokens");
  for (int i = 0; i < kSeqLen; ++i) e.tokens[static_cast<std::size_t>(i)] = toks[static_cast<std::size_t>(i)].get<int>();
  e.key_pos = j.at("key_pos").get<int>();
  e.pair_pos = e.key_pos + 1;
  e.target = j.at("target").get<int>();
  const auto& pair = j.at("pair");
  if (e.pair_pos >= kSeqLen - 1 || pair.size() != 2 ||
      pair[0].get<int>() != e.tokens[static_cast<std::size_t>(e.pair_pos)] ||
      pair[1].get<int>() != e.tokens[static_cast<std::size_t>(e.pair_pos + 1)]) {
    throw std::invalid_argument("record: pair does not match tokens");
  }
  return e;
}

inline nlohmann::ordered_json perturbation_json(const MappingTable& table) {
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const PerturbedGroup& g : table.perturbed_groups()) {
    groups.push_back({{"group", g.group},
                      {"pair", {token_of(g.pair.first), token_of(g.pair.second)}},
                      {"delta", g.delta}});
  }
  return {{"k", table.reasoning_complexity()}, {"groups", groups}};
}

inline MappingTable table_from_perturbation_json(const nlohmann::json& j) {
  std::vector<PerturbedGroup> groups;
  for (const auto& g : j.at("groups")) {
    groups.push_back({g.at("group").get<int>(), kPerturbationGroups.at(g.at("group").get<std::size_t>()),
                      g.at("delta").get<int>()});
  }
  return MappingTable::with_perturbations(groups);
}

inline nlohmann::ordered_json dataset_manifest(const DatasetBundle& b) {
  return {{"format", "compctl-dataset"},
          {"version", 1},
          {"seed", b.seed},
          {"pair_policy", policy_name(b.policy)},
          {"sizes", {{"train", b.train.size()}, {"id_test", b.id_test.size()}, {"ood_test", b.ood_test.size()}}},
          {"seq_len", kSeqLen},
          {"vocab_size", kVocabSize},
          {"perturbation", perturbation_json(b.table)},
          {"files", {{"train", "train.jsonl"}, {"id_test", "id_test.jsonl"}, {"ood_test", "ood_test.jsonl"}}}};
}

inline void write_jsonl(const fs::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Example& e : examples) out << example_to_jsonl(e) << '\n';
}

/// Writes train.jsonl, id_test.jsonl, ood_test.jsonl and manifest.json into `dir`.
inline void export_bundle(const DatasetBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  write_jsonl(dir / "train.jsonl", b.train);
  write_jsonl(dir / "id_test.jsonl", b.id_test);
  write_jsonl(dir / "ood_test.jsonl", b.ood_test);
  std::ofstream(dir / "manifest.json", std::ios::binary) << dataset_manifest(b).dump(2) << '\n';
}

inline std::vector<Example> read_jsonl(const fs::path& path, Split split, const MappingTable& table) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Example> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Example e = example_from_json(nlohmann::json::parse(line), split);
    validate_example(e, table);
    out.push_back(e);
  }
  return out;
}

/// Reads a directory written by export_bundle, validating every record.
inline DatasetBundle import_bundle(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing dataset manifest in " + dir.string());
  const nlohmann::json m = nlohmann::json::parse(in);
  DatasetBundle b;
  b.seed = m.at("seed").get<std::uint64_t>();
  b.policy = policy_from_name(m.at("pair_policy").get<std::string>());
  b.table = table_from_perturbation_json(m.at("perturbation"));
  b.train = read_jsonl(dir / "train.jsonl", Split::kTrain, b.table);
  b.id_test = read_jsonl(dir / "id_test.jsonl", Split::kIdTest, b.table);
  b.ood_test = read_jsonl(dir / "ood_test.jsonl", Split::kOodTest, b.table);
  return b;
}

}  // namespace compctl::corpus
