// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "cope/model.hpp"
#include "cope/properties.hpp"
#include "cope/train.hpp"

using namespace cope;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// 1. sin(wp)sin(wq) = (cos(w(p-q)) - cos(w(p+q)))/2 on a 64x64 grid, 20 random w.
Outcome phase_identity() {
  Rng rng(2024);
  const auto grid = square_grid(64);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) worst = std::max(worst, phase_identity_check(rng.uniform(1e-4, 3.0), grid));
  return {worst <= 1e-12, "max error " + fmt(worst)};
}

// 2. No decay for every default frequency up to Delta = 1e4; the damped control must fail.
Outcome no_decay() {
  const std::size_t windows = 1000, max_delta = 10000;
  double worst_ratio = INFINITY, worst_slope = INFINITY;
  bool all = true;
  for (double w : frequency_schedule(64, 10000.0)) {
    const DecayReport r = assert_no_decay(decay_profile(w, max_delta, windows), windows);
    all = all && r.passed;
    worst_ratio = std::min(worst_ratio, r.ratio);
    worst_slope = std::min(worst_slope, r.slope);
  }
  std::vector<double> damped(max_delta + 1);
  for (std::size_t d = 0; d <= max_delta; ++d) damped[d] = std::exp(-0.01 * static_cast<double>(d));
  const DecayReport c = assert_no_decay(profile_from_values(damped, windows), windows);
  return {all && !c.passed, "worst last/first " + fmt(worst_ratio) + ", worst slope " + fmt(worst_slope) +
                                "; control " + (c.passed ? "passed (wrong)" : "rejected") + " with slope " +
                                fmt(c.slope)};
}

// 3. a = 3+4i, d_k = 4.
Outcome variant_arithmetic() {
  const ComplexMatrix a(RealMatrix{{3.0}}, RealMatrix{{4.0}});
  const auto score = [&](ScoreKind k) { return score_to_real(a, ScoreVariant{k, 0.2}, 4)(0, 0); };
  const double m = score(ScoreKind::magnitude), p = score(ScoreKind::phase), r = score(ScoreKind::real),
               h = score(ScoreKind::hybrid);
  const bool ok = m == 2.5 && p == 0.3 && r == 1.5 && h == 2.56;
  return {ok, "magnitude " + fmt(m) + ", phase " + fmt(p) + ", real " + fmt(r) + ", hybrid " + fmt(h)};
}

// 4. Real inputs, real weights, real-part score == standard attention.
Outcome degeneracy() {
  const std::size_t d = 64, heads = 4, dk = 16, T = 12;
  Rng rng(4);
  PhaseAttentionLayer phase(d, heads, ScoreVariant{ScoreKind::real}, rng);
  StandardAttentionLayer standard(d, heads, rng);
  for (std::size_t h = 0; h < heads; ++h) {
    phase.q_proj[h].w_imag.value.fill(0.0);
    phase.k_proj[h].w_imag.value.fill(0.0);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < dk; ++c) {
        standard.w_q.value(r, h * dk + c) = phase.q_proj[h].w_real.value(r, c);
        standard.w_k.value(r, h * dk + c) = phase.k_proj[h].w_real.value(r, c);
        standard.w_v.value(r, h * dk + c) = phase.w_v[h].value(r, c);
      }
  }
  standard.w_o.value = phase.w_o.value;
  const RealMatrix x = normal_matrix(T, d, 1.0, rng);
  EmbeddedBatch z;
  z.z = ComplexMatrix(x, RealMatrix(T, d));
  z.pad_mask.assign(T, false);
  const RealMatrix got = phase_attend(z, phase);
  Tape tape;
  Binder bind(tape);
  std::vector<std::size_t> pos(T);
  std::iota(pos.begin(), pos.end(), 0);
  const RealMatrix want =
      standard.forward(bind, tape.constant(x), pos, std::vector<bool>(T, false), ForwardMode{}).value();
  const double err = max_abs_diff(got, want);
  return {err <= 1e-12, "max abs difference " + fmt(err)};
}

// 5. Every variant on the toy layer (4 tokens, d_model 8, 2 heads).
Outcome gradients() {
  double worst = 0.0;
  std::string where;
  for (ScoreKind k : kAllScoreKinds)
    for (const auto& g : gradcheck_layer(k, GradcheckOptions{}))
      if (g.rel_error >= worst) {
        worst = g.rel_error;
        where = std::string(to_string(k)) + " " + g.group;
      }
  return {worst <= 1e-4, "worst relative error " + fmt(worst) + " (" + where + ")"};
}

// 6. linear_attend vs explicit O(T^2), four variants, T in {1, 2, 7, 64}.
Outcome linear_equivalence() {
  double worst = 0.0;
  for (const auto& r : linear_equivalence_check({1, 2, 7, 64}, 16, 6)) worst = std::max(worst, r.rel_error);
  return {worst <= 1e-10, "worst relative error " + fmt(worst)};
}

// 7. Doubling T: linear ~2x, quadratic ~4x.
Outcome linear_scaling() {
  const BenchResult b = bench_attention({2048, 4096}, 32, 5);
  const double lin = b.points[1].linear_ms / b.points[0].linear_ms;
  const double quad = b.points[1].quadratic_ms / b.points[0].quadratic_ms;
  return {lin <= 2.5 && quad >= 3.4, "linear x" + fmt(lin) + " (" + fmt(b.points[1].linear_ms) + " ms), quadratic x" +
                                         fmt(quad) + " (" + fmt(b.points[1].quadratic_ms) + " ms)"};
}

// 8. RoPE/CoPE real-multiplication ratio scales with depth.
Outcome op_count() {
  ModelConfig c = ModelConfig::desk();
  c.layers = 1;
  const Ratio r1 = count_ops(c, 128).rope_over_cope;
  c.layers = 6;
  const Ratio r6 = count_ops(c, 128).rope_over_cope;
  const bool ok = r6.num * r1.den == 6 * r1.num * r6.den;
  return {ok, "L=1 " + std::to_string(r1.num) + "/" + std::to_string(r1.den) + ", L=6 " + std::to_string(r6.num) +
                  "/" + std::to_string(r6.den)};
}

RunConfig order_task_run(PositionalScheme scheme, ScoreKind kind) {
  RunConfig c;
  c.model = ModelConfig::desk();
  c.task.kind = TaskKind::order;
  c.task.seq_len = 8;
  c.task.train_size = 1024;
  c.task.val_size = 512;
  c.train.epochs = 30;
  c.train.learning_rate = 1e-3;
  c.set_seed(0);
  c.model.positional.scheme = scheme;
  c.model.variant.kind = kind;
  return c;
}

// 9. Order task: CoPE learns it, no positions stays at chance.
Outcome positional_learning(const fs::path& work) {
  struct Arm {
    std::string name;
    PositionalScheme scheme;
    ScoreKind kind;
    bool must_learn;
  };
  const std::vector<Arm> arms{{"cope_phase", PositionalScheme::cope, ScoreKind::phase, true},
                              {"cope_magnitude", PositionalScheme::cope, ScoreKind::magnitude, true},
                              {"none", PositionalScheme::none, ScoreKind::phase, false}};
  bool ok = true;
  std::string detail;
  for (const Arm& a : arms) {
    const fs::path dir = work / ("order_" + a.name);
    fs::remove_all(dir);
    const TrainResult r = train(order_task_run(a.scheme, a.kind), dir);
    const double acc = r.final_val.accuracy;
    ok = ok && (a.must_learn ? acc >= 0.9 : acc <= 0.55);
    detail += (detail.empty() ? "" : ", ") + a.name + " " + fmt(acc);
  }
  return {ok, "final val accuracy: " + detail};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(COPE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// 10. Two identical `train` invocations.
Outcome determinism(const fs::path& work) {
  const std::string flags =
      " --task order --scheme cope --variant hybrid --seq-len 8 --train-size 128 --val-size 64 --epochs 3 --seed 11";
  const fs::path a = work / "determinism_a", b = work / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const int ca = run_cli("train --out " + a.string() + flags, work / "determinism_a.log");
  const int cb = run_cli("train --out " + b.string() + flags, work / "determinism_b.log");
  if (ca != 0 || cb != 0) return {false, "train exited with " + std::to_string(ca) + "/" + std::to_string(cb)};
  const std::string ma = slurp(a / "metrics.csv"), mb = slurp(b / "metrics.csv");
  return {!ma.empty() && ma == mb, std::to_string(ma.size()) + " bytes, " + (ma == mb ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "cope_acceptance";
  fs::create_directories(work);

  struct Criterion {
    int id;
    std::string name;
    double budget_s;  // 0: no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "phase identity", 1.0, phase_identity},
      {2, "no long-term decay", 10.0, no_decay},
      {3, "score-variant arithmetic", 0.0, variant_arithmetic},
      {4, "degeneracy oracle", 0.0, degeneracy},
      {5, "gradient suite", 30.0, gradients},
      {6, "linear/quadratic equivalence", 5.0, linear_equivalence},
      {7, "linear scaling bench", 120.0, linear_scaling},
      {8, "op-count ratio", 0.0, op_count},
      {9, "positional-signal learning", 600.0, [&] { return positional_learning(work); }},
      {10, "determinism", 0.0, [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt(secs) + " s";
    if (c.budget_s > 0.0) {
      timing += secs < c.budget_s ? " < " : " >= ";
      timing += fmt(c.budget_s) + " s budget";
      if (secs >= c.budget_s) o.passed = false;
    }
    failed += !o.passed;
    std::cout << (o.passed ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << o.detail << " ["
              << timing << "]" << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
