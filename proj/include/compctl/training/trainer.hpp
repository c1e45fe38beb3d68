#pragma once

#include "compctl/analysis/evaluation.hpp"
#include "compctl/corpus/dataset.hpp"
#include "compctl/model/checkpoint.hpp"
#include "compctl/model/forward.hpp"
#include "compctl/training/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace compctl::training {

namespace fs = std::filesystem;
using corpus::Example;
using corpus::kPairCount;

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,id_acc,ood_acc,commut_prob,lr";

/// One row of metrics.csv. Epochs are 0-based.
struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double id_acc = 0.0;
  double ood_acc = 0.0;
  double commut_prob = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

/// Per-epoch training statistics, logged every epoch. Loss and accuracies are
/// running values over the epoch's minibatches, measured before each update.
/// Pairs absent from the training set hold NaN.
struct TrainEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::array<double, kPairCount> pair_acc{};
};

struct RunResult {
  std::vector<EpochRecord> records;
  std::vector<TrainEpoch> train_history;
  model::ModelParams params;
  fs::path final_checkpoint;

  [[nodiscard]] std::vector<double> loss_history() const {
    std::vector<double> out;
    for (const TrainEpoch& t : train_history) out.push_back(t.train_loss);
    return out;
  }
  [[nodiscard]] std::vector<double> pair_accuracy_history(corpus::AnchorPair p) const {
    std::vector<double> out;
    for (const TrainEpoch& t : train_history) out.push_back(t.pair_acc[static_cast<std::size_t>(p.index())]);
    return out;
  }
};

/// Raised when the training loss stops being finite.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, nlohmann::ordered_json diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
  [[nodiscard]] const nlohmann::ordered_json& diagnostic() const noexcept { return diagnostic_; }

 private:
  nlohmann::ordered_json diagnostic_;
};

/// Seeds of the independent random streams of a run.
inline std::uint64_t data_seed(std::uint64_t master_seed) { return RngStream(master_seed, "data").next_u64(); }
inline RngStream init_stream(std::uint64_t master_seed) { return RngStream(master_seed, "init"); }
inline RngStream shuffle_stream(std::uint64_t master_seed, int epoch) {
  return RngStream(master_seed, "shuffle:" + std::to_string(epoch));
}

struct BatchStats {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::array<std::size_t, kPairCount> pair_seen{};
  std::array<std::size_t, kPairCount> pair_correct{};
};

/// Gradient of the mean last-token cross-entropy over `batch`, written to
/// `grads`. Work is split into fixed chunks of `chunk_size` sequences, each
/// differentiated into its own buffer; buffers are summed in chunk order, so
/// the result does not depend on `threads`.
inline BatchStats batch_gradient(const model::ModelParams& params, std::span<const Example* const> batch,
                                 model::ModelParams& grads, std::size_t chunk_size, int threads) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  const std::size_t n_chunks = (batch.size() + chunk_size - 1) / chunk_size;
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<model::ModelParams> chunk_grads(n_chunks);
  std::vector<BatchStats> chunk_stats(n_chunks);

  auto work = [&](std::size_t c) {
    const std::size_t lo = c * chunk_size;
    const std::size_t hi = std::min(batch.size(), lo + chunk_size);
    std::vector<int> tokens;
    std::vector<int> targets;
    tokens.reserve((hi - lo) * corpus::kSeqLen);
    for (std::size_t i = lo; i < hi; ++i) {
      tokens.insert(tokens.end(), batch[i]->tokens.begin(), batch[i]->tokens.end());
      targets.push_back(batch[i]->target);
    }
    chunk_grads[c] = model::zero_params(params.config);
    Tape tape;
    const model::ParamVars pv = model::bind_params(tape, params, &chunk_grads[c]);
    model::GraphOptions opt;
    opt.last_only = true;
    const model::GraphOutputs g = model::build_graph(tape, params, pv, tokens, opt);
    std::vector<double> row_losses;
    const Var loss = ops::cross_entropy(tape, g.logits, targets, scale, &row_losses);
    tape.backward(loss);

    BatchStats& st = chunk_stats[c];
    const Tensor& logits = tape.value(g.logits);
    for (std::size_t r = 0; r < row_losses.size(); ++r) {
      const Example& e = *batch[lo + r];
      const auto p = static_cast<std::size_t>(e.pair().index());
      const bool ok = model::argmax(logits.row(r)) == e.target;
      st.loss_sum += row_losses[r];
      st.correct += ok ? 1 : 0;
      st.pair_seen[p] += 1;
      st.pair_correct[p] += ok ? 1 : 0;
    }
  };

  const auto n_threads = static_cast<std::size_t>(std::max(1, threads));
  if (n_threads == 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(n_threads, n_chunks); ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < n_chunks; c += n_threads) work(c);
      });
    }
    for (std::thread& th : pool) th.join();
  }

  grads = std::move(chunk_grads[0]);
  BatchStats total = chunk_stats[0];
  for (std::size_t c = 1; c < n_chunks; ++c) {
    std::vector<Tensor*> dst;
    grads.for_each([&](const model::TensorSlot&, Tensor& t) { dst.push_back(&t); });
    std::size_t i = 0;
    chunk_grads[c].for_each([&](const model::TensorSlot&, const Tensor& t) { *dst[i++] += t; });
    total.loss_sum += chunk_stats[c].loss_sum;
    total.correct += chunk_stats[c].correct;
    for (std::size_t p = 0; p < kPairCount; ++p) {
      total.pair_seen[p] += chunk_stats[c].pair_seen[p];
      total.pair_correct[p] += chunk_stats[c].pair_correct[p];
    }
  }
  return total;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_metrics_csv(const fs::path& path, const std::vector<EpochRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const EpochRecord& r : records) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_acc) << ','
        << format_double(r.id_acc) << ',' << format_double(r.ood_acc) << ',' << format_double(r.commut_prob)
        << ',' << format_double(r.lr) << '\n';
  }
}

/// Columns: epoch, train_loss, train_acc, then one accuracy column per
/// anchor pair in index order (aa, ab, ..., dd).
inline void write_train_history_csv(const fs::path& path, const std::vector<TrainEpoch>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,train_acc";
  for (int p = 0; p < kPairCount; ++p) out << ',' << corpus::AnchorPair::from_index(p).name();
  out << '\n';
  for (const TrainEpoch& t : history) {
    out << t.epoch << ',' << format_double(t.train_loss) << ',' << format_double(t.train_acc);
    for (double a : t.pair_acc) out << ',' << format_double(a);
    out << '\n';
  }
}

inline std::vector<TrainEpoch> read_train_history_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<TrainEpoch> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t comma; (comma = line.find(',', start)) != std::string::npos; start = comma + 1) {
      cells.push_back(line.substr(start, comma - start));
    }
    cells.push_back(line.substr(start));
    if (cells.size() != 3 + kPairCount) throw std::runtime_error("malformed pair accuracy row: " + line);
    auto num = [](const std::string& s) { return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s); };
    TrainEpoch t;
    t.epoch = std::stoi(cells[0]);
    t.train_loss = num(cells[1]);
    t.train_acc = num(cells[2]);
    for (std::size_t p = 0; p < kPairCount; ++p) t.pair_acc[p] = num(cells[3 + p]);
    out.push_back(t);
  }
  return out;
}

inline std::vector<EpochRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw std::runtime_error("unexpected metrics header in " + path.string());
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.train_loss, &r.train_acc, &r.id_acc,
                    &r.ood_acc, &r.commut_prob, &r.lr) != 7) {
      throw std::runtime_error("malformed metrics row: " + line);
    }
    out.push_back(r);
  }
  return out;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"weight_decay", c.weight_decay},
          {"base_lr", c.base_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"multiplier", c.multiplier},
          {"cosine_epochs", c.cosine_epochs},
          {"min_lr", c.min_lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"grad_clip_norm", c.grad_clip_norm},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"master_seed", c.master_seed},
          {"eval_every", c.eval_every},
          {"eval_cap", c.eval_cap},
          {"checkpoint_every", c.checkpoint_every},
          {"chunk_size", c.chunk_size},
          {"threads", c.threads}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.multiplier = j.value("multiplier", c.multiplier);
  c.cosine_epochs = j.value("cosine_epochs", c.cosine_epochs);
  c.min_lr = j.value("min_lr", c.min_lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_cap = j.value("eval_cap", c.eval_cap);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.chunk_size = j.value("chunk_size", c.chunk_size);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

namespace detail {

inline nlohmann::ordered_json history_json(const std::vector<EpochRecord>& records,
                                           const std::vector<TrainEpoch>& train) {
  nlohmann::ordered_json rec = nlohmann::ordered_json::array();
  for (const EpochRecord& r : records) {
    rec.push_back({r.epoch, r.train_loss, r.train_acc, r.id_acc, r.ood_acc, r.commut_prob, r.lr});
  }
  nlohmann::ordered_json tr = nlohmann::ordered_json::array();
  for (const TrainEpoch& t : train) {
    nlohmann::ordered_json pa = nlohmann::ordered_json::array();
    // JSON has no NaN; absent pairs are stored as null.
    for (double a : t.pair_acc) pa.push_back(std::isnan(a) ? nlohmann::ordered_json() : nlohmann::ordered_json(a));
    tr.push_back({{"epoch", t.epoch}, {"loss", t.train_loss}, {"acc", t.train_acc}, {"pairs", pa}});
  }
  return {{"records", rec}, {"train", tr}};
}

inline void history_from_json(const nlohmann::json& j, std::vector<EpochRecord>& records,
                              std::vector<TrainEpoch>& train) {
  for (const auto& r : j.at("records")) {
    records.push_back({r[0].get<int>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                       r[4].get<double>(), r[5].get<double>(), r[6].get<double>()});
  }
  for (const auto& t : j.at("train")) {
    TrainEpoch e;
    e.epoch = t.at("epoch").get<int>();
    e.train_loss = t.at("loss").get<double>();
    e.train_acc = t.at("acc").get<double>();
    for (std::size_t p = 0; p < kPairCount; ++p) {
      const auto& v = t.at("pairs")[p];
      e.pair_acc[p] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
    train.push_back(e);
  }
}

inline std::vector<model::NamedTensor> optimizer_tensors(const OptimizerState& s) {
  std::vector<model::NamedTensor> out;
  s.m.for_each([&](const model::TensorSlot& slot, const Tensor& t) { out.push_back({"m." + slot.name, t}); });
  s.v.for_each([&](const model::TensorSlot& slot, const Tensor& t) { out.push_back({"v." + slot.name, t}); });
  return out;
}

inline void restore_optimizer(OptimizerState& s, const std::vector<model::NamedTensor>& tensors) {
  std::size_t i = 0;
  auto take = [&](const std::string& prefix) {
    return [&, prefix](const model::TensorSlot& slot, Tensor& t) {
      if (i >= tensors.size() || tensors[i].name != prefix + slot.name || !tensors[i].tensor.same_shape(t)) {
        throw std::runtime_error("checkpoint: optimizer state does not match the model");
      }
      t = tensors[i++].tensor;
    };
  };
  s.m.for_each(take("m."));
  s.v.for_each(take("v."));
}

inline fs::path checkpoint_dir(const fs::path& out_dir, int epochs_done) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d", epochs_done);
  return out_dir / "checkpoints" / name;
}

/// Most recent periodic checkpoint, if any.
inline std::optional<fs::path> latest_checkpoint(const fs::path& out_dir) {
  const fs::path root = out_dir / "checkpoints";
  if (!fs::is_directory(root)) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!fs::exists(entry.path() / "manifest.json")) continue;
    if (!best || entry.path().filename() > best->filename()) best = entry.path();
  }
  return best;
}

}  // namespace detail

struct RunOptions {
  /// Empty: nothing is written to disk.
  fs::path out_dir;
  /// Continue from the latest checkpoint under out_dir when one exists.
  bool resume = false;
  /// Extra keys for checkpoint manifests (e.g. config hash).
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::function<void(const TrainEpoch&, const EpochRecord*)> on_epoch;
};

/// Trains a freshly initialised model on data.train. Fully determined by
/// (data, mcfg, tcfg); see init_stream and shuffle_stream for the seeds.
inline RunResult train_run(const corpus::DatasetBundle& data, const model::ModelConfig& mcfg,
                           const TrainConfig& tcfg, const RunOptions& opt = {}) {
  mcfg.validate();
  tcfg.validate();
  if (mcfg.vocab_size != corpus::kVocabSize || mcfg.seq_len != corpus::kSeqLen) {
    throw std::invalid_argument("train_run: model vocab/seq_len do not match the corpus");
  }
  if (data.train.empty()) throw std::invalid_argument("train_run: empty training set");

  RunResult result;
  result.params = model::init_params(mcfg, init_stream(tcfg.master_seed));
  OptimizerState state = OptimizerState::zeros_like(result.params);
  int start_epoch = 0;

  if (opt.resume && !opt.out_dir.empty()) {
    if (auto ck = detail::latest_checkpoint(opt.out_dir)) {
      model::LoadedCheckpoint loaded = model::load_checkpoint(*ck);
      if (loaded.params.config != mcfg) throw std::runtime_error("resume: checkpoint model config differs");
      result.params = std::move(loaded.params);
      detail::restore_optimizer(state, loaded.optimizer);
      state.step = loaded.manifest.at("optimizer_step").get<std::int64_t>();
      start_epoch = loaded.manifest.at("epochs_completed").get<int>();
      detail::history_from_json(loaded.manifest.at("history"), result.records, result.train_history);
    }
  }

  auto save = [&](const fs::path& dir, int epochs_done) {
    nlohmann::ordered_json meta = opt.meta;
    meta["epochs_completed"] = epochs_done;
    meta["optimizer_step"] = state.step;
    meta["train_config"] = to_json(tcfg);
    meta["history"] = detail::history_json(result.records, result.train_history);
    model::save_checkpoint(dir, result.params, meta, detail::optimizer_tensors(state));
  };
  auto write_logs = [&] {
    write_metrics_csv(opt.out_dir / "metrics.csv", result.records);
    write_train_history_csv(opt.out_dir / "pair_accuracy.csv", result.train_history);
  };
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);

  const auto id_eval = analysis::capped(data.id_test, tcfg.eval_cap);
  const auto ood_eval = analysis::capped(data.ood_test, tcfg.eval_cap);
  std::vector<std::uint32_t> order(data.train.size());
  std::vector<const Example*> batch;
  model::ModelParams grads;

  for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, tcfg);
    std::iota(order.begin(), order.end(), 0U);
    RngStream shuf = shuffle_stream(tcfg.master_seed, epoch);
    shuffle(order, shuf);

    BatchStats epoch_stats;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.train[order[i]]);
      const BatchStats st = batch_gradient(result.params, batch, grads, tcfg.chunk_size, tcfg.threads);
      const double batch_loss = st.loss_sum / static_cast<double>(batch.size());
      const double grad_norm = global_norm(grads);
      if (!std::isfinite(batch_loss) || !std::isfinite(grad_norm)) {
        nlohmann::ordered_json diag{{"error", "non-finite loss"},
                                    {"epoch", epoch},
                                    {"batch_start", start},
                                    {"optimizer_step", state.step},
                                    {"batch_loss", format_double(batch_loss)},
                                    {"grad_norm", format_double(grad_norm)},
                                    {"lr", lr}};
        if (!opt.out_dir.empty()) std::ofstream(opt.out_dir / "diagnostic.json") << diag.dump(2) << '\n';
        throw NumericFailure("non-finite training loss at epoch " + std::to_string(epoch), diag);
      }
      clip_gradients(grads, tcfg.grad_clip_norm);
      adamw_step(result.params, grads, state, lr, tcfg);

      epoch_stats.loss_sum += st.loss_sum;
      epoch_stats.correct += st.correct;
      for (std::size_t p = 0; p < kPairCount; ++p) {
        epoch_stats.pair_seen[p] += st.pair_seen[p];
        epoch_stats.pair_correct[p] += st.pair_correct[p];
      }
    }

    TrainEpoch te;
    te.epoch = epoch;
    const auto n = static_cast<double>(order.size());
    te.train_loss = epoch_stats.loss_sum / n;
    te.train_acc = static_cast<double>(epoch_stats.correct) / n;
    for (std::size_t p = 0; p < kPairCount; ++p) {
      te.pair_acc[p] = epoch_stats.pair_seen[p] == 0
                           ? std::numeric_limits<double>::quiet_NaN()
                           : static_cast<double>(epoch_stats.pair_correct[p]) /
                                 static_cast<double>(epoch_stats.pair_seen[p]);
    }
    result.train_history.push_back(te);

    const bool evaluate = (epoch + 1) % tcfg.eval_every == 0 || epoch + 1 == tcfg.epochs;
    const EpochRecord* rec_ptr = nullptr;
    if (evaluate) {
      EpochRecord r;
      r.epoch = epoch;
      r.train_loss = te.train_loss;
      r.train_acc = te.train_acc;
      r.id_acc = id_eval.empty() ? std::numeric_limits<double>::quiet_NaN() : analysis::accuracy(result.params, id_eval);
      r.ood_acc = ood_eval.empty() ? std::numeric_limits<double>::quiet_NaN() : analysis::accuracy(result.params, ood_eval);
      r.commut_prob = ood_eval.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : analysis::commutativity_probability(result.params, ood_eval);
      r.lr = lr;
      result.records.push_back(r);
      rec_ptr = &result.records.back();
    }
    if (opt.on_epoch) opt.on_epoch(te, rec_ptr);
    if (!opt.out_dir.empty()) {
      if (evaluate) write_logs();
      if (tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0 && epoch + 1 < tcfg.epochs) {
        save(detail::checkpoint_dir(opt.out_dir, epoch + 1), epoch + 1);
      }
    }
  }

  if (!opt.out_dir.empty()) {
    write_logs();
    result.final_checkpoint = opt.out_dir / "final";
    save(result.final_checkpoint, tcfg.epochs);
  }
  return result;
}

}  // namespace compctl::training
