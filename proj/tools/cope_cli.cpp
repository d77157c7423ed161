// cope_cli: train / eval / verify / bench / sweep.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cope/model.hpp"
#include "cope/properties.hpp"
#include "cope/train.hpp"

namespace fs = std::filesystem;

namespace {

// Flags shared by train and sweep. Unset flags leave the config alone.
struct RunFlags {
  std::string config_path;
  std::string preset;
  std::optional<std::string> task, scheme, variant, attention_mode, imag_mode, pooling;
  std::optional<double> alpha, gamma, lr, weight_decay, dropout;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, seq_len, train_size, val_size, num_classes;
  std::optional<std::string> data_train, data_val, format;
  bool wall_clock = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "Config file (key = value)")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "Model size preset")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--task", task, "order | position_bucket | first_token | external");
    app->add_option("--scheme", scheme, "cope | additive_sinusoidal | learned | rope | none");
    app->add_option("--variant", variant, "magnitude | phase | real | hybrid | hybrid_norm");
    app->add_option("--attention-mode", attention_mode, "softmax | linear");
    app->add_option("--imag-mode", imag_mode, "full_sinusoidal | sin_only");
    app->add_option("--pooling", pooling, "mean | cls");
    app->add_option("--alpha", alpha, "Phase coefficient for the hybrid variants");
    app->add_option("--gamma", gamma, "Scale of the positional imaginary part");
    app->add_option("--seed", seed, "Seed for model init, data and training");
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--dropout", dropout);
    app->add_option("--batch-size", batch_size);
    app->add_option("--seq-len", seq_len, "Synthetic task sequence length");
    app->add_option("--train-size", train_size, "Synthetic task training examples");
    app->add_option("--val-size", val_size, "Synthetic task validation examples");
    app->add_option("--num-classes", num_classes);
    app->add_option("--data-train", data_train, "TSV training file (task external)");
    app->add_option("--data-val", data_val, "TSV validation file (task external)");
    app->add_option("--format", format, "single_sentence | sentence_pair");
    app->add_flag("--wall-clock", wall_clock, "Write measured wall_ms into metrics.csv");
  }

  cope::RunConfig build() const {
    cope::RunConfig cfg;
    if (!preset.empty()) cfg.model = cope::ModelConfig::preset(preset);
    if (!config_path.empty()) cfg.apply(cope::KeyValues::load(config_path));
    if (!preset.empty() && !config_path.empty()) {
      // an explicit preset wins over sizes in the file
      const cope::ModelConfig p = cope::ModelConfig::preset(preset);
      cfg.model.layers = p.layers;
      cfg.model.heads = p.heads;
      cfg.model.d_model = p.d_model;
      cfg.model.positional.max_positions = p.positional.max_positions;
    }
    if (seed) cfg.set_seed(*seed);
    if (task) cfg.task.kind = cope::parse_task_kind(*task);
    if (scheme) cfg.model.positional.scheme = cope::parse_scheme(*scheme);
    if (variant) cfg.model.variant.kind = cope::parse_score_kind(*variant);
    if (attention_mode) cfg.model.attention_mode = cope::parse_attention_mode(*attention_mode);
    if (imag_mode) cfg.model.positional.imag_mode = cope::parse_imag_mode(*imag_mode);
    if (pooling) cfg.model.pooling = cope::parse_pooling(*pooling);
    if (alpha) cfg.train.alpha = *alpha;
    if (gamma) cfg.train.gamma = *gamma;
    if (lr) cfg.train.learning_rate = *lr;
    if (weight_decay) cfg.train.weight_decay = *weight_decay;
    if (dropout) cfg.train.dropout = *dropout;
    if (epochs) cfg.train.epochs = *epochs;
    if (batch_size) cfg.train.batch_size = *batch_size;
    if (seq_len) cfg.task.seq_len = *seq_len;
    if (train_size) cfg.task.train_size = *train_size;
    if (val_size) cfg.task.val_size = *val_size;
    if (num_classes) cfg.task.num_classes = *num_classes;
    if (data_train) cfg.data_train = *data_train;
    if (data_val) cfg.data_val = *data_val;
    if (format) cfg.data_format = cope::parse_tsv_format(*format);
    if (wall_clock) cfg.train.wall_clock_metrics = true;
    return cfg;
  }
};

void print_record(const cope::MetricsRecord& r) {
  std::cout << "loss " << r.loss << "  accuracy " << r.accuracy;
  if (r.f1) std::cout << "  f1 " << *r.f1;
  std::cout << "\n";
}

int run_train(RunFlags flags, const std::string& out, bool resume) {
  // a resumed run reuses its own config snapshot unless told otherwise
  if (resume && flags.config_path.empty()) flags.config_path = (fs::path(out) / "config.txt").string();
  const cope::RunConfig cfg = flags.build();
  cope::TrainOptions opts;
  opts.resume = resume;
  opts.log = &std::cout;
  const cope::TrainResult r = cope::train(cfg, out, opts);
  std::cout << "final val ";
  print_record(r.final_val);
  std::cout << "run directory " << out << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& config_path, const std::string& split,
             const std::string& data, const std::string& vocab_path, const std::string& format) {
  cope::Dataset ds;
  if (!data.empty()) {
    if (vocab_path.empty()) throw cope::ConfigError("eval: --data needs --vocab (the run's vocab.txt)");
    const cope::Checkpoint ck = cope::load_checkpoint(checkpoint);
    cope::ModelConfig m;
    m.read(ck.config);
    const cope::Vocabulary vocab = cope::Vocabulary::load(vocab_path);
    ds = cope::load_tsv(data, cope::parse_tsv_format(format), m.num_classes, m.max_positions(), &vocab).data;
  } else {
    if (config_path.empty()) throw cope::ConfigError("eval: give --config (a run's config.txt) or --data");
    const cope::RunConfig cfg = cope::RunConfig::from_kv(cope::KeyValues::load(config_path));
    cope::RunData rd = cope::load_run_data(cfg);
    ds = split == "train" ? std::move(rd.train) : std::move(rd.val);
  }
  print_record(cope::evaluate(checkpoint, ds));
  return 0;
}

int run_verify(const std::string& out, std::uint64_t seed, std::size_t windows) {
  cope::VerifyOptions opts;
  opts.seed = seed;
  opts.decay_windows = windows;
  const cope::VerifyReport rep = cope::run_verification(opts);
  std::cout << rep.text();
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "verify_report.txt") << rep.text();
    std::ofstream(fs::path(out) / "verify_report.json") << rep.json().dump(2) << "\n";
  }
  return rep.passed() ? 0 : 1;
}

int run_bench(const std::vector<std::size_t>& lengths, std::size_t d_k, std::size_t runs, const std::string& out) {
  const cope::BenchResult r = cope::bench_attention(lengths, d_k, runs);
  std::ostringstream csv;
  csv << "seq_len,d_k,runs,linear_ms,quadratic_ms\n";
  for (const auto& p : r.points)
    csv << p.seq_len << "," << d_k << "," << runs << "," << p.linear_ms << "," << p.quadratic_ms << "\n";
  std::cout << csv.str();
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const auto& a = r.points[i - 1];
    const auto& b = r.points[i];
    std::cout << "T " << a.seq_len << " -> " << b.seq_len << ": linear x" << b.linear_ms / a.linear_ms
              << ", quadratic x" << b.quadratic_ms / a.quadratic_ms << "\n";
  }
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "bench.csv") << csv.str();
  }
  return 0;
}

int run_sweep(const RunFlags& flags, const std::string& out, std::size_t threads) {
  const cope::RunConfig cfg = flags.build();
  const auto rows = cope::sweep(cfg, cope::default_sweep_grid(), out, threads, &std::cout);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.ok;
  std::cout << "wrote " << (fs::path(out) / "sweep.csv").string() << " (" << rows.size() << " cells, " << failed
            << " failed)\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complex positional encoding experiments"};
  app.require_subcommand(1);

  RunFlags train_flags;
  std::string train_out = "runs/train";
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and write a run directory");
  train_flags.add_to(train_cmd);
  train_cmd->add_option("--out", train_out, "Run directory");
  train_cmd->add_flag("--resume", resume, "Continue from <out>/checkpoint_last.ckpt");

  std::string eval_ckpt, eval_config, eval_split = "val", eval_data, eval_vocab, eval_format = "single_sentence";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--config", eval_config, "Run config.txt used to regenerate the dataset");
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val"}));
  eval_cmd->add_option("--data", eval_data, "TSV file to evaluate")->check(CLI::ExistingFile);
  eval_cmd->add_option("--vocab", eval_vocab, "vocab.txt from the training run")->check(CLI::ExistingFile);
  eval_cmd->add_option("--format", eval_format, "single_sentence | sentence_pair");

  std::string verify_out;
  std::uint64_t verify_seed = 0;
  std::size_t verify_windows = 1000;
  auto* verify_cmd = app.add_subcommand("verify", "Run the property checks; nonzero exit on failure");
  verify_cmd->add_option("--out", verify_out, "Directory for verify_report.txt / .json");
  verify_cmd->add_option("--seed", verify_seed);
  verify_cmd->add_option("--windows", verify_windows, "Windows for the decay envelope");

  std::vector<std::size_t> bench_lengths{2048, 4096};
  std::size_t bench_dk = 32, bench_runs = 5;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "Time linear vs quadratic attention");
  bench_cmd->add_option("--lengths", bench_lengths)->delimiter(',');
  bench_cmd->add_option("--d-k", bench_dk);
  bench_cmd->add_option("--runs", bench_runs);
  bench_cmd->add_option("--out", bench_out);

  RunFlags sweep_flags;
  std::string sweep_out = "runs/sweep";
  std::size_t sweep_threads = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train every encoding scheme and variant");
  sweep_flags.add_to(sweep_cmd);
  sweep_cmd->add_option("--out", sweep_out);
  sweep_cmd->add_option("--threads", sweep_threads, "Worker threads (default: COPE_THREADS or all cores)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(train_flags, train_out, resume);
    if (*eval_cmd) return run_eval(eval_ckpt, eval_config, eval_split, eval_data, eval_vocab, eval_format);
    if (*verify_cmd) return run_verify(verify_out, verify_seed, verify_windows);
    if (*bench_cmd) return run_bench(bench_lengths, bench_dk, bench_runs, bench_out);
    if (*sweep_cmd) return run_sweep(sweep_flags, sweep_out, sweep_threads);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
