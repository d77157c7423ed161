// Training harness: AdamW, metrics, run directories with CSV metrics and
// checkpoints, resumable training, evaluation, the encoding sweep, and the
// linear-vs-quadratic attention benchmark.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cope/autodiff.hpp"
#include "cope/checkpoint.hpp"
#include "cope/kv.hpp"
#include "cope/layers.hpp"
#include "cope/linear_attention.hpp"
#include "cope/model.hpp"
#include "cope/random.hpp"
#include "cope/tasks.hpp"

namespace cope {

inline constexpr std::uint64_t kConfigFormatVersion = 1;

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double dropout = 0.2;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double alpha = 0.2;
  double gamma = 1.0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // wall_ms in metrics.csv breaks byte-identical reruns, so it is written as
  // 0 unless asked for; timing.csv always has the measured values.
  bool wall_clock_metrics = false;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must be in [0, 1)");
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("train: betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  }
};

// ---------------------------------------------------------------------------
// AdamW

struct AdamState {
  RealMatrix m;
  RealMatrix v;
};

/// One decoupled-weight-decay Adam update at 1-based step `step`:
///   p <- p - lr*wd*p
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
inline void adamw_step(Parameter& p, AdamState& s, const TrainConfig& cfg, std::uint64_t step) {
  if (step == 0) throw std::invalid_argument("adamw_step: step is 1-based");
  if (s.m.empty()) {
    s.m = RealMatrix(p.value.rows(), p.value.cols());
    s.v = RealMatrix(p.value.rows(), p.value.cols());
  }
  if (!s.m.same_shape(p.value) || !p.grad.same_shape(p.value))
    throw DimensionError("adamw_step: state or gradient shape differs from parameter");
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    p.value[i] -= cfg.learning_rate * cfg.weight_decay * p.value[i];
    s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
    s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
    p.value[i] -= cfg.learning_rate * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg.adam_eps);
  }
}

class AdamW {
 public:
  AdamW(NamedParameters params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& [name, p] : params_) state_[name];
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  void step() {
    ++step_;
    for (auto& [name, p] : params_)
      if (p->trainable) adamw_step(*p, state_[name], cfg_, step_);
  }

  std::uint64_t steps() const { return step_; }

  void write(Checkpoint& ck) const {
    for (const auto& [name, s] : state_) {
      if (s.m.empty()) continue;
      ck.blobs.emplace_back("adam_m/" + name, s.m);
      ck.blobs.emplace_back("adam_v/" + name, s.v);
    }
    ck.metadata.set("optimizer.step", step_);
  }

  void read(const Checkpoint& ck) {
    step_ = ck.metadata.get_uint("optimizer.step", 0);
    for (auto& [name, p] : params_) {
      const RealMatrix* m = ck.find("adam_m/" + name);
      const RealMatrix* v = ck.find("adam_v/" + name);
      if (step_ > 0 && p->trainable && (!m || !v))
        throw CheckpointError("checkpoint is missing optimizer state for '" + name + "'");
      if (m && v) state_[name] = AdamState{*m, *v};
    }
  }

 private:
  NamedParameters params_;
  TrainConfig cfg_;
  std::map<std::string, AdamState> state_;
  std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Metrics

inline std::vector<std::size_t> argmax_rows(const RealMatrix& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold) {
  if (pred.size() != gold.size()) throw DimensionError("accuracy: prediction count mismatch");
  if (gold.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += pred[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

/// F1 on the positive class; 0 when there are no true positives.
inline double binary_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold,
                        std::size_t positive) {
  if (pred.size() != gold.size()) throw DimensionError("binary_f1: prediction count mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = pred[i] == positive, g = gold[i] == positive;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> f1;
  std::uint64_t wall_ms = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,accuracy,f1,wall_ms";

inline std::string csv_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + KeyValues::format_double(r.loss) + "," +
         KeyValues::format_double(r.accuracy) + "," + (r.f1 ? KeyValues::format_double(*r.f1) : "") + "," +
         std::to_string(r.wall_ms);
}

/// Mean loss, accuracy and (when the dataset has a positive class) F1 in
/// evaluation mode.
inline MetricsRecord evaluate_dataset(TransformerModel& model, const Dataset& data, std::size_t epoch = 0,
                                      const std::string& split = "eval") {
  if (data.examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const RealMatrix logits = model.logits(data.examples);
  std::vector<std::size_t> gold;
  for (const auto& e : data.examples) gold.push_back(e.label);
  Tape tape;
  const double loss = ad::cross_entropy(tape.constant(logits), gold).value()(0, 0);
  const auto pred = argmax_rows(logits);
  MetricsRecord r{epoch, split, loss, accuracy(pred, gold), std::nullopt, 0};
  if (data.positive_class) r.f1 = binary_f1(pred, gold, *data.positive_class);
  return r;
}

// ---------------------------------------------------------------------------
// Run configuration

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs; serialized as flat `key = value` text.
struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  TaskSpec task;
  std::string data_train;  // TSV paths for task.kind = external
  std::string data_val;
  TsvFormat data_format = TsvFormat::single_sentence;
  std::size_t data_min_count = 2;

  void set_seed(std::uint64_t seed) {
    train.seed = seed;
    model.seed = seed;
    task.seed = seed;
  }

  /// Model config with the training-level overrides (dropout, alpha, gamma) applied.
  ModelConfig resolved_model() const {
    ModelConfig m = model;
    m.dropout = train.dropout;
    m.variant.alpha = train.alpha;
    m.positional.gamma = train.gamma;
    return m;
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("format_version", kConfigFormatVersion);
    resolved_model().write(kv);
    kv.set("train.learning_rate", train.learning_rate);
    kv.set("train.weight_decay", train.weight_decay);
    kv.set("train.dropout", train.dropout);
    kv.set("train.epochs", std::uint64_t{train.epochs});
    kv.set("train.batch_size", std::uint64_t{train.batch_size});
    kv.set("train.alpha", train.alpha);
    kv.set("train.gamma", train.gamma);
    kv.set("train.seed", train.seed);
    kv.set("train.beta1", train.beta1);
    kv.set("train.beta2", train.beta2);
    kv.set("train.adam_eps", train.adam_eps);
    kv.set("train.wall_clock_metrics", train.wall_clock_metrics);
    kv.set("task.kind", std::string(to_string(task.kind)));
    kv.set("task.seq_len", std::uint64_t{task.seq_len});
    kv.set("task.vocab_size", std::uint64_t{task.vocab_size});
    kv.set("task.num_classes", std::uint64_t{task.num_classes});
    kv.set("task.seed", task.seed);
    kv.set("task.train_size", std::uint64_t{task.train_size});
    kv.set("task.val_size", std::uint64_t{task.val_size});
    if (task.kind == TaskKind::external) {
      kv.set("data.train", data_train);
      kv.set("data.val", data_val);
      kv.set("data.format", data_format == TsvFormat::single_sentence ? "single_sentence" : "sentence_pair");
      kv.set("data.min_count", std::uint64_t{data_min_count});
    }
    return kv;
  }

  /// Applies every key in `kv` on top of the current values. Unknown keys and
  /// unsupported format versions are errors.
  void apply(const KeyValues& kv) {
    static const char* known[] = {
        "format_version", "model.layers", "model.heads", "model.d_model", "model.vocab_size",
        "model.num_classes", "model.segment_vocab", "model.dropout", "model.pooling", "model.seed",
        "model.attention_mode", "positional.scheme", "positional.gamma", "positional.omega_base",
        "positional.max_positions", "positional.imag_mode", "variant.kind", "variant.alpha",
        "variant.phase_eps", "train.learning_rate", "train.weight_decay", "train.dropout", "train.epochs",
        "train.batch_size", "train.alpha", "train.gamma", "train.seed", "train.beta1", "train.beta2",
        "train.adam_eps", "train.wall_clock_metrics", "task.kind", "task.seq_len", "task.vocab_size",
        "task.num_classes", "task.seed", "task.train_size", "task.val_size", "data.train", "data.val",
        "data.format", "data.min_count", "preset"};
    for (const auto& [k, v] : kv.entries())
      if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) == std::end(known))
        throw ParseError("unknown config key '" + k + "'");
    const std::uint64_t version = kv.get_uint("format_version", kConfigFormatVersion);
    if (version != kConfigFormatVersion)
      throw ParseError("unsupported config format_version " + std::to_string(version));
    if (kv.has("preset")) {
      const ModelConfig p = ModelConfig::preset(kv.get("preset"));
      model.layers = p.layers;
      model.heads = p.heads;
      model.d_model = p.d_model;
      model.positional.max_positions = p.positional.max_positions;
    }
    model.read(kv);
    // model.dropout / variant.alpha / positional.gamma are aliases of the train.* keys
    train.dropout = kv.get_double("model.dropout", train.dropout);
    train.alpha = kv.get_double("variant.alpha", train.alpha);
    train.gamma = kv.get_double("positional.gamma", train.gamma);
    train.learning_rate = kv.get_double("train.learning_rate", train.learning_rate);
    train.weight_decay = kv.get_double("train.weight_decay", train.weight_decay);
    train.dropout = kv.get_double("train.dropout", train.dropout);
    train.epochs = kv.get_uint("train.epochs", train.epochs);
    train.batch_size = kv.get_uint("train.batch_size", train.batch_size);
    train.alpha = kv.get_double("train.alpha", train.alpha);
    train.gamma = kv.get_double("train.gamma", train.gamma);
    train.seed = kv.get_uint("train.seed", train.seed);
    train.beta1 = kv.get_double("train.beta1", train.beta1);
    train.beta2 = kv.get_double("train.beta2", train.beta2);
    train.adam_eps = kv.get_double("train.adam_eps", train.adam_eps);
    train.wall_clock_metrics = kv.get_bool("train.wall_clock_metrics", train.wall_clock_metrics);
    task.kind = parse_task_kind(kv.get_or("task.kind", std::string(to_string(task.kind))));
    task.seq_len = kv.get_uint("task.seq_len", task.seq_len);
    task.vocab_size = kv.get_uint("task.vocab_size", task.vocab_size);
    task.num_classes = kv.get_uint("task.num_classes", task.num_classes);
    task.seed = kv.get_uint("task.seed", task.seed);
    task.train_size = kv.get_uint("task.train_size", task.train_size);
    task.val_size = kv.get_uint("task.val_size", task.val_size);
    data_train = kv.get_or("data.train", data_train);
    data_val = kv.get_or("data.val", data_val);
    if (kv.has("data.format")) data_format = parse_tsv_format(kv.get("data.format"));
    data_min_count = kv.get_uint("data.min_count", data_min_count);
  }

  static RunConfig from_kv(const KeyValues& kv) {
    RunConfig c;
    c.apply(kv);
    return c;
  }
};

struct RunData {
  Dataset train;
  Dataset val;
  std::optional<Vocabulary> vocab;
};

/// Generates the synthetic task or loads the TSV files named by the config.
inline RunData load_run_data(const RunConfig& cfg) {
  RunData d;
  if (cfg.task.kind != TaskKind::external) {
    auto [tr, va] = split_dataset(generate_task(cfg.task), cfg.task.train_size);
    d.train = std::move(tr);
    d.val = std::move(va);
    return d;
  }
  if (cfg.data_train.empty() || cfg.data_val.empty())
    throw ConfigError("external task needs data.train and data.val");
  TsvDataset tr = load_tsv(cfg.data_train, cfg.data_format, cfg.task.num_classes,
                           cfg.model.positional.max_positions, nullptr, cfg.data_min_count);
  TsvDataset va = load_tsv(cfg.data_val, cfg.data_format, cfg.task.num_classes,
                           cfg.model.positional.max_positions, &tr.vocab);
  d.train = std::move(tr.data);
  d.val = std::move(va.data);
  d.vocab = std::move(tr.vocab);
  return d;
}

/// Fills the dataset-dependent model fields.
inline ModelConfig model_for_data(const RunConfig& cfg, const Dataset& train) {
  ModelConfig m = cfg.resolved_model();
  m.vocab_size = train.vocab_size;
  m.num_classes = train.num_classes;
  const bool has_segments = std::any_of(train.examples.begin(), train.examples.end(),
                                        [](const Example& e) { return !e.segment_ids.empty(); });
  if (has_segments) m.segment_vocab = std::max<std::size_t>(m.segment_vocab, 2);
  return m;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::vector<MetricsRecord> history;
  MetricsRecord final_val;
  MetricsRecord best_val;
  std::filesystem::path run_dir;
};

struct TrainOptions {
  bool resume = false;
  std::ostream* log = nullptr;
  std::size_t stop_after_epoch = 0;  // nonzero: stop early, as if interrupted
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  return lines;
}

inline void save_training_state(const std::filesystem::path& path, TransformerModel& model, const AdamW& opt,
                                const Rng& rng, const RunConfig& cfg, std::size_t epoch,
                                const MetricsRecord& best) {
  Checkpoint ck;
  model.config().write(ck.config);
  ck.metadata.set("epoch", std::uint64_t{epoch});
  ck.metadata.set("rng", rng.serialize());
  ck.metadata.set("best.epoch", std::uint64_t{best.epoch});
  ck.metadata.set("best.accuracy", best.accuracy);
  ck.metadata.set("best.loss", best.loss);
  ck.metadata.set("data.vocab_size", std::uint64_t{model.config().vocab_size});
  ck.metadata.set("data.num_classes", std::uint64_t{model.config().num_classes});
  ck.metadata.set("run.config", std::string("config.txt"));
  (void)cfg;
  model.write_parameters(ck);
  opt.write(ck);
  save_checkpoint(path.string(), ck);
}

}  // namespace detail

inline constexpr const char* kLastCheckpoint = "checkpoint_last.ckpt";
inline constexpr const char* kBestCheckpoint = "checkpoint_best.ckpt";

/// Trains into `run_dir`: config.txt, metrics.csv, timing.csv,
/// checkpoint_last.ckpt, checkpoint_best.ckpt, report.txt (and vocab.txt for
/// TSV data). Deterministic given the config.
inline TrainResult train(const RunConfig& cfg, const std::filesystem::path& run_dir, const TrainOptions& opts = {}) {
  namespace fs = std::filesystem;
  cfg.train.validate();
  RunData data = load_run_data(cfg);
  const ModelConfig mcfg = model_for_data(cfg, data.train);
  mcfg.validate();
  fs::create_directories(run_dir);
  const fs::path metrics_path = run_dir / "metrics.csv";
  const fs::path timing_path = run_dir / "timing.csv";

  TransformerModel model(mcfg);
  AdamW opt(model.named_parameters(), cfg.train);
  Rng rng(cfg.train.seed ^ 0x5eedULL);
  std::size_t start_epoch = 1;
  TrainResult result;
  result.run_dir = run_dir;
  result.best_val.accuracy = -1.0;

  if (opts.resume) {
    const Checkpoint ck = load_checkpoint((run_dir / kLastCheckpoint).string());
    ModelConfig saved;
    saved.read(ck.config);
    if (saved.vocab_size != mcfg.vocab_size || saved.num_classes != mcfg.num_classes ||
        saved.d_model != mcfg.d_model || saved.layers != mcfg.layers)
      throw IncompatibleCheckpointError("resume: checkpoint does not match the run configuration");
    model.read_parameters(ck);
    opt.read(ck);
    rng.deserialize(ck.metadata.get("rng"));
    start_epoch = ck.metadata.get_uint("epoch", 0) + 1;
    result.best_val.epoch = ck.metadata.get_uint("best.epoch", 0);
    result.best_val.accuracy = ck.metadata.get_double("best.accuracy", -1.0);
    result.best_val.loss = ck.metadata.get_double("best.loss", 0.0);
    result.best_val.split = "val";
    // keep only the rows of completed epochs
    std::string kept = std::string(kMetricsHeader) + "\n";
    const auto lines = detail::read_lines(metrics_path);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::size_t epoch = std::stoull(lines[i].substr(0, lines[i].find(',')));
      if (epoch < start_epoch) kept += lines[i] + "\n";
    }
    detail::write_text(metrics_path, kept);
    std::string timing = "epoch,split,wall_ms\n";
    const auto tlines = detail::read_lines(timing_path);
    for (std::size_t i = 1; i < tlines.size(); ++i)
      if (std::stoull(tlines[i].substr(0, tlines[i].find(','))) < start_epoch) timing += tlines[i] + "\n";
    detail::write_text(timing_path, timing);
  } else {
    KeyValues snapshot = cfg.to_kv();
    mcfg.write(snapshot);
    detail::write_text(run_dir / "config.txt", "# run configuration\n" + snapshot.dump());
    detail::write_text(metrics_path, std::string(kMetricsHeader) + "\n");
    detail::write_text(timing_path, "epoch,split,wall_ms\n");
    if (data.vocab) data.vocab->save((run_dir / "vocab.txt").string());
  }

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const ForwardMode mode{true, mcfg.dropout, &rng};
  const std::size_t batch_size = cfg.train.batch_size;

  for (std::size_t epoch = start_epoch; epoch <= cfg.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<std::size_t> pred_all, gold_all;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::size_t end = std::min(order.size(), b + batch_size);
      std::vector<const Example*> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = b; i < end; ++i) {
        batch.push_back(&data.train.examples[order[i]]);
        labels.push_back(data.train.examples[order[i]].label);
      }
      opt.zero_grad();
      Tape tape;
      Binder bind(tape);
      Var logits = model.forward(bind, batch, mode);
      Var loss = ad::cross_entropy(logits, labels);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) {
        throw TrainingDivergedError("training diverged: loss is " + std::to_string(lv) + " at step " +
                                    std::to_string(opt.steps() + 1) + " (epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(b / batch_size + 1) + ")");
      }
      tape.backward(loss);
      opt.step();
      loss_sum += lv * static_cast<double>(end - b);
      const auto pred = argmax_rows(logits.value());
      pred_all.insert(pred_all.end(), pred.begin(), pred.end());
      gold_all.insert(gold_all.end(), labels.begin(), labels.end());
    }
    const auto t1 = std::chrono::steady_clock::now();
    MetricsRecord tr{epoch, "train", loss_sum / static_cast<double>(order.size()), accuracy(pred_all, gold_all),
                     std::nullopt, 0};
    if (data.train.positive_class) tr.f1 = binary_f1(pred_all, gold_all, *data.train.positive_class);
    MetricsRecord va = evaluate_dataset(model, data.val, epoch, "val");
    const auto t2 = std::chrono::steady_clock::now();
    const auto train_ms = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
    const auto val_ms = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(t2 - t1).count());
    if (cfg.train.wall_clock_metrics) {
      tr.wall_ms = train_ms;
      va.wall_ms = val_ms;
    }
    {
      std::ofstream os(metrics_path, std::ios::binary | std::ios::app);
      os << csv_row(tr) << "\n" << csv_row(va) << "\n";
      std::ofstream ts(timing_path, std::ios::binary | std::ios::app);
      ts << epoch << ",train," << train_ms << "\n" << epoch << ",val," << val_ms << "\n";
    }
    result.history.push_back(tr);
    result.history.push_back(va);
    result.final_val = va;
    if (va.accuracy > result.best_val.accuracy) {
      result.best_val = va;
      save_model((run_dir / kBestCheckpoint).string(), model);
    }
    detail::save_training_state(run_dir / kLastCheckpoint, model, opt, rng, cfg, epoch, result.best_val);
    if (opts.log) {
      *opts.log << "epoch " << epoch << "  train loss " << tr.loss << " acc " << tr.accuracy << "  val loss "
                << va.loss << " acc " << va.accuracy << "  (" << train_ms + val_ms << " ms)\n";
    }
    if (opts.stop_after_epoch != 0 && epoch >= opts.stop_after_epoch) return result;
  }

  std::ostringstream report;
  report << "scheme " << to_string(mcfg.positional.scheme);
  if (mcfg.positional.scheme == PositionalScheme::cope) report << " variant " << to_string(mcfg.variant.kind);
  report << "\nparameters " << model.parameter_count() << "\nepochs " << cfg.train.epochs << "\nfinal val loss "
         << result.final_val.loss << " accuracy " << result.final_val.accuracy;
  if (result.final_val.f1) report << " f1 " << *result.final_val.f1;
  report << "\nbest val accuracy " << result.best_val.accuracy << " at epoch " << result.best_val.epoch << "\n";
  detail::write_text(run_dir / "report.txt", report.str());
  return result;
}

/// Evaluates a saved model on a dataset; the dataset must match the
/// checkpoint's vocabulary size and class count.
inline MetricsRecord evaluate(const std::string& checkpoint_path, const Dataset& data) {
  TransformerModel model = load_model(checkpoint_path);
  const ModelConfig& m = model.config();
  if (data.vocab_size != m.vocab_size) {
    throw IncompatibleCheckpointError("checkpoint vocabulary has " + std::to_string(m.vocab_size) +
                                      " entries, dataset has " + std::to_string(data.vocab_size));
  }
  if (data.num_classes != m.num_classes) {
    throw IncompatibleCheckpointError("checkpoint predicts " + std::to_string(m.num_classes) +
                                      " classes, dataset has " + std::to_string(data.num_classes));
  }
  std::size_t longest = 0;
  for (const auto& e : data.examples) longest = std::max(longest, e.tokens.size());
  if (longest > m.max_positions()) {
    throw IncompatibleCheckpointError("dataset has sequences of length " + std::to_string(longest) +
                                      ", checkpoint supports " + std::to_string(m.max_positions()));
  }
  return evaluate_dataset(model, data);
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepCell {
  PositionalScheme scheme;
  std::optional<ScoreKind> variant;

  std::string name() const {
    std::string n(to_string(scheme));
    if (variant) n += "_" + std::string(to_string(*variant));
    return n;
  }
};

/// Five CoPE variants, three positional baselines, and the no-position control.
inline std::vector<SweepCell> default_sweep_grid() {
  std::vector<SweepCell> g;
  for (ScoreKind k : kAllScoreKinds) g.push_back({PositionalScheme::cope, k});
  g.push_back({PositionalScheme::additive_sinusoidal, std::nullopt});
  g.push_back({PositionalScheme::learned, std::nullopt});
  g.push_back({PositionalScheme::rope, std::nullopt});
  g.push_back({PositionalScheme::none, std::nullopt});
  return g;
}

struct SweepRow {
  SweepCell cell;
  bool ok = false;
  MetricsRecord final_val;
  MetricsRecord best_val;
  std::string error;
};

/// Worker threads for the sweep: COPE_THREADS if set (>= 1), otherwise the
/// hardware concurrency.
inline std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COPE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

inline const char* kSweepHeader =
    "scheme,variant,seed,status,val_loss,val_accuracy,val_f1,best_val_accuracy,best_epoch,run_dir,error";

/// Trains every cell into out_dir/<cell>/ and writes out_dir/sweep.csv. A
/// failing cell is recorded and the sweep continues.
inline std::vector<SweepRow> sweep(const RunConfig& base, const std::vector<SweepCell>& grid,
                                   const std::filesystem::path& out_dir, std::size_t threads = 0,
                                   std::ostream* log = nullptr) {
  std::filesystem::create_directories(out_dir);
  std::vector<SweepRow> rows(grid.size());
  std::mutex log_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;
  const auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mutex);
        if (next == grid.size()) return;
        i = next++;
      }
      RunConfig cfg = base;
      cfg.model.positional.scheme = grid[i].scheme;
      if (grid[i].variant) cfg.model.variant.kind = *grid[i].variant;
      rows[i].cell = grid[i];
      try {
        const TrainResult r = train(cfg, out_dir / grid[i].name());
        rows[i].ok = true;
        rows[i].final_val = r.final_val;
        rows[i].best_val = r.best_val;
      } catch (const std::exception& e) {
        rows[i].error = e.what();
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << grid[i].name() << ": "
             << (rows[i].ok ? "val accuracy " + KeyValues::format_double(rows[i].final_val.accuracy)
                            : "FAILED " + rows[i].error)
             << "\n";
      }
    }
  };
  const std::size_t n = std::min(threads == 0 ? worker_threads() : threads, grid.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  csv << kSweepHeader << "\n";
  for (const SweepRow& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    csv << to_string(r.cell.scheme) << "," << (r.cell.variant ? std::string(to_string(*r.cell.variant)) : "")
        << "," << base.train.seed << "," << (r.ok ? "ok" : "failed") << ",";
    if (r.ok) {
      csv << KeyValues::format_double(r.final_val.loss) << "," << KeyValues::format_double(r.final_val.accuracy)
          << "," << (r.final_val.f1 ? KeyValues::format_double(*r.final_val.f1) : "") << ","
          << KeyValues::format_double(r.best_val.accuracy) << "," << r.best_val.epoch;
    } else {
      csv << ",,,,";
    }
    csv << "," << r.cell.name() << "," << err << "\n";
  }
  detail::write_text(out_dir / "sweep.csv", csv.str());
  return rows;
}

// ---------------------------------------------------------------------------
// Linear vs quadratic attention timing

struct BenchPoint {
  std::size_t seq_len = 0;
  double linear_ms = 0.0;     // median
  double quadratic_ms = 0.0;  // median
};

struct BenchResult {
  std::vector<BenchPoint> points;
  std::size_t d_k = 0;
  std::size_t runs = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace detail

/// Median wall time of the full linear path (lift, aggregate, attend) and of
/// the explicit O(T^2) evaluation, per sequence length.
inline BenchResult bench_attention(const std::vector<std::size_t>& lengths, std::size_t d_k, std::size_t runs,
                                   std::uint64_t seed = 0, bool with_quadratic = true) {
  BenchResult res{{}, d_k, runs};
  Rng rng(seed);
  ScoreVariant v;
  double sink = 0.0;
  struct Inputs {
    ComplexMatrix q, k;
    RealMatrix val;
  };
  std::vector<Inputs> inputs;
  for (std::size_t t : lengths) {
    ComplexMatrix q(normal_matrix(t, d_k, 1.0, rng), normal_matrix(t, d_k, 1.0, rng));
    ComplexMatrix k(normal_matrix(t, d_k, 1.0, rng), normal_matrix(t, d_k, 1.0, rng));
    inputs.push_back({std::move(q), std::move(k), normal_matrix(t, d_k, 1.0, rng)});
  }
  std::vector<std::vector<double>> lin(lengths.size()), quad(lengths.size());
  // each sample repeats the call until it spans ~20 ms and reports per-call time;
  // the repeat count is fixed from the warm-up pass (r == 0), which is then discarded
  constexpr double kMinSampleMs = 20.0;
  std::vector<std::size_t> lin_reps(lengths.size(), 1), quad_reps(lengths.size(), 1);
  auto sample = [](std::size_t reps, const auto& fn) {
    return detail::time_ms([&] {
             for (std::size_t i = 0; i < reps; ++i) fn();
           }) /
           static_cast<double>(reps);
  };
  auto reps_for = [&](double ms) {
    return ms >= kMinSampleMs ? std::size_t{1} : static_cast<std::size_t>(std::ceil(kMinSampleMs / std::max(ms, 1e-3)));
  };
  // lengths are interleaved inside each repetition so machine drift hits all of them alike
  for (std::size_t r = 0; r <= runs; ++r) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const Inputs& in = inputs[i];
      const double tl = sample(lin_reps[i], [&] {
        const LiftedFeatures lq = lift(in.q), lk = lift(in.k);
        sink += linear_attend(lq, aggregate(lk, in.val), v)(0, 0);
      });
      if (r == 0) lin_reps[i] = reps_for(tl);
      else lin[i].push_back(tl);
      if (with_quadratic) {
        const LiftedFeatures lq = lift(in.q), lk = lift(in.k);
        const double tq = sample(quad_reps[i], [&] { sink += quadratic_attend(lq, lk, in.val, v)(0, 0); });
        if (r == 0) quad_reps[i] = reps_for(tq);
        else quad[i].push_back(tq);
      }
    }
  }
  for (std::size_t i = 0; i < lengths.size(); ++i)
    res.points.push_back({lengths[i], detail::median(lin[i]), with_quadratic ? detail::median(quad[i]) : 0.0});
  if (!std::isfinite(sink)) throw std::runtime_error("bench: non-finite output");
  return res;
}

}  // namespace cope
