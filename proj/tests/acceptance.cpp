// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

// Acceptance run: one [PASS]/[FAIL] line per criterion, with the measured
// quantities underneath. Usage: atkd_acceptance [criterion ...]
// (default: all seven). Exit status is nonzero when any selected criterion
// other than the soft latency check fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "atkd/config.hpp"
#include "atkd/losses.hpp"
#include "atkd/matrix.hpp"
#include "atkd/smoothing.hpp"
#include "atkd/tensor_io.hpp"
#include "test_util.hpp"

using namespace atkd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and sizes, all pinned here.
constexpr int kPropertyDists = 10000;
constexpr double kPropertySeconds = 60.0;
constexpr int kSmoothSteps = 5;
constexpr double kTraceGapFloor = 1e-12;  // strict increase required while the gap exceeds this
constexpr double kMonotoneSlack = 1e-12;
constexpr int kTaylorDists = 10000;
constexpr double kTaylorBoundPerLogV = 5e-3;
constexpr double kGoldenTol = 1e-5;
constexpr double kGammaStated = 0.152906;
constexpr double kEntropyStated = 0.679198;
constexpr double kEntropyVerified = 0.6792345864;  // 50-digit evaluation
constexpr int kRnntLattices = 1000;
constexpr double kRnntTol = 1e-10;
const double kFixtureLoss = std::log(4.0);  // printed as 1.386294
constexpr double kFixtureTol = 1e-9;
constexpr double kRnntSeconds = 60.0;
constexpr int kGradInstances = 100;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 300.0;
constexpr double kMatrixSeconds = 1800.0;
constexpr std::size_t kAdaptiveWins = 8;
constexpr std::size_t kFixedLosses = 6;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool report(int id, bool pass, const std::string& title, const std::vector<std::string>& details) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << title << '\n';
  for (const auto& d : details) std::cout << "       " << d << '\n';
  std::cout.flush();
  return pass;
}

std::string fmt(const char* f, double x) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// ---- 1 -------------------------------------------------------------------

bool criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<std::size_t> vdist(2, 100);
  std::uniform_real_distribution<double> gdist(0.01, 3.0);
  int rank_fail = 0, mono_fail = 0, step_fail = 0, trace_fail = 0;
  SmoothingConfig cfg;
  cfg.max_steps = kSmoothSteps;
  for (int i = 0; i < kPropertyDists; ++i) {
    const std::size_t V = vdist(rng);
    const auto p = testing::random_dist(rng, V, 1e-6);

    const double g = gdist(rng);
    const auto q = power_transform(p, g);
    for (std::size_t a = 0; a + 1 < V; ++a) {
      if ((p[a] < p[a + 1]) != (q[a] < q[a + 1]) || (p[a] > p[a + 1]) != (q[a] > q[a + 1])) {
        ++rank_fail;
        break;
      }
    }

    double prev = transformed_entropy(p, 0.0);
    for (int k = 1; k <= 40; ++k) {
      const double h = transformed_entropy(p, 0.1 * k);
      if (h > prev + kMonotoneSlack) {
        ++mono_fail;
        break;
      }
      prev = h;
    }

    const double logv = std::log(static_cast<double>(V));
    const auto stepped = power_transform(p, taylor_gamma(p, logv));
    if (!(std::abs(entropy(stepped) - logv) < std::abs(entropy(p) - logv))) ++step_fail;

    const SmoothingResult r = adaptive_smooth(ProbLattice(Tensor({1, 1, V}, p)), cfg);
    const auto trace = r.entropy_trace.slice(0);
    for (int z = 0; z < kSmoothSteps; ++z) {
      if (logv - trace[z] <= kTraceGapFloor) break;
      if (!(trace[z + 1] > trace[z]) || trace[z + 1] > logv + 1e-12) {
        ++trace_fail;
        break;
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = rank_fail == 0 && mono_fail == 0 && step_fail == 0 && trace_fail == 0 && secs < kPropertySeconds;
  return report(1, pass, "smoothing oracle properties",
                {std::to_string(kPropertyDists) + " distributions, V in [2,100], min prob 1e-6",
                 "ranking violations " + std::to_string(rank_fail) + ", entropy monotonicity violations " +
                     std::to_string(mono_fail),
                 "one-step gap not reduced " + std::to_string(step_fail) + ", Z=5 trace not increasing " +
                     std::to_string(trace_fail),
                 fmt("runtime %.2f s (limit 60 s)", secs)});
}

// ---- 2 -------------------------------------------------------------------

bool criterion2() {
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<std::size_t> vdist(2, 100);
  std::uniform_real_distribution<double> gdist(0.95, 1.05);
  double worst = 0.0;
  for (int i = 0; i < kTaylorDists; ++i) {
    const std::size_t V = vdist(rng);
    const auto p = testing::random_dist(rng, V, 1e-4, 4.0 + 4.0 * (i % 3));
    const double bound = kTaylorBoundPerLogV * std::log(static_cast<double>(V));
    for (double g : {0.95, 1.05, gdist(rng)}) {
      worst = std::max(worst, std::abs(taylor_entropy_approx(p, g) - transformed_entropy(p, g)) / bound);
    }
  }
  const std::vector<double> fixture = {0.9, 0.1};
  const double gamma = taylor_gamma(fixture, std::log(2.0));
  const double post = entropy(power_transform(fixture, gamma));
  const bool gamma_ok = std::abs(gamma - kGammaStated) <= kGoldenTol;
  const bool entropy_ok = std::abs(post - kEntropyVerified) <= kGoldenTol;
  const bool pass = worst <= 1.0 && gamma_ok && entropy_ok;
  return report(2, pass, "Taylor fidelity and worked fixture",
                {fmt("worst |approx - exact| / (5e-3 log V) = %.4f over gamma in [0.95, 1.05]", worst),
                 fmt("[0.9, 0.1]: gamma %.7f", gamma) + fmt(" (expected 0.152906 +- 1e-5, |d| = %.1e)",
                                                               std::abs(gamma - kGammaStated)),
                 fmt("post-step entropy %.7f", post) +
                     fmt(" (independently verified 0.6792346 +- 1e-5, |d| = %.1e;", std::abs(post - kEntropyVerified)) +
                     fmt(" listed value 0.679198 differs by %.1e)", std::abs(post - kEntropyStated))});
}

// ---- 3 -------------------------------------------------------------------

bool criterion3() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1003);
  std::uniform_int_distribution<std::size_t> tdist(1, 4), udist(0, 3), vdist(2, 4);
  double worst = 0.0;
  for (int i = 0; i < kRnntLattices; ++i) {
    const std::size_t T = tdist(rng), U = udist(rng), V = vdist(rng);
    const ProbLattice q = testing::random_lattice(rng, T, U + 1, V, 3.0);
    const TokenSequence y = testing::random_tokens(rng, U, V);
    worst = std::max(worst, std::abs(rnnt_loss(q.log_probs(), y).loss - rnnt_loss_bruteforce(q, y)));
  }
  const ProbLattice single(Tensor({1, 2, 2}, 0.5));
  const ProbLattice pair(Tensor({2, 2, 2}, 0.5));
  const double f1 = rnnt_loss(single.log_probs(), {1}).loss;
  const double f2 = rnnt_loss(pair.log_probs(), {1}).loss;
  const double secs = seconds_since(t0);
  const bool pass = worst <= kRnntTol && std::abs(f1 - kFixtureLoss) <= kFixtureTol &&
                    std::abs(f2 - kFixtureLoss) <= kFixtureTol && secs < kRnntSeconds;
  return report(3, pass, "transducer loss oracle",
                {fmt("max |dp - bruteforce| = %.2e over 1000 lattices (T<=4, U<=3, V<=4; tol 1e-10)", worst),
                 fmt("uniform fixtures: T=1 %.10f", f1) + fmt(", T=2 %.10f (expected ln 4 = 1.386294... +- 1e-9)", f2),
                 fmt("runtime %.2f s (limit 60 s)", secs)});
}

// ---- 4 -------------------------------------------------------------------

constexpr std::size_t kT = 5, kU = 3;

struct GradCase {
  std::string name;
  double worst = 0.0;
  int failures = 0;
  void add(double err) {
    worst = std::max(worst, err);
    if (!(err < kGradTol)) ++failures;
  }
};

bool criterion4() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1004);
  GradCase mse{"hidden_mse"}, kl{"output_kl"}, skl{"smoothed_output_kl"}, rnnt{"rnnt_loss"}, e2e{"end-to-end"};
  const double taus[] = {0.5, 1.0, 2.0, 4.0};
  SmoothingConfig scfg;
  for (int i = 0; i < kGradInstances; ++i) {
    const std::uint64_t seed = 5000 + static_cast<std::uint64_t>(i);
    ToyTransducer student = ToyTransducer::init(testing::small_model(seed));
    const ToyTransducer teacher = ToyTransducer::init(testing::small_model(seed + 100000, ContextPolicy::full()));
    const std::size_t V = student.config.vocab;
    const Tensor x = testing::random_tensor(rng, {kT, student.config.feature_dim});
    const TokenSequence y = testing::random_tokens(rng, kU, V);
    const ForwardTrace ttr = forward(teacher, x, y);
    const KlDirection dir = i % 2 == 0 ? KlDirection::kStudentFirst : KlDirection::kTeacherFirst;
    const bool student_first = dir == KlDirection::kStudentFirst;

    {
      HiddenStack s = forward(student, x, y).hidden;
      const auto analytic = hidden_mse(s, ttr.hidden).grad;
      std::vector<double> a, n;
      auto take = [&](std::vector<Tensor>& xs, const std::vector<Tensor>& gs) {
        for (std::size_t l = 0; l < xs.size(); ++l) {
          a.insert(a.end(), gs[l].values().begin(), gs[l].values().end());
          const auto part = testing::numeric_grad(xs[l], [&] { return hidden_mse(s, ttr.hidden).loss; });
          n.insert(n.end(), part.begin(), part.end());
        }
      };
      take(s.encoder, analytic.encoder);
      take(s.decoder, analytic.decoder);
      mse.add(testing::rel_error(a, n));
    }
    {
      Tensor logits = testing::random_tensor(rng, {kT, kU + 1, V}, -3, 3);
      const double tau = taus[i % 4];
      const KlResult r = output_kl(ProbLattice::from_logits(logits), ttr.probs, tau, dir);
      const auto n = testing::numeric_grad(
          logits, [&] { return output_kl(ProbLattice::from_logits(logits), ttr.probs, tau, dir).loss; });
      kl.add(testing::rel_error(r.grad_logits.values(), n));
    }
    const ProbLattice t_smooth = adaptive_smooth(ttr.probs, scfg).smoothed;
    {
      Tensor logits = testing::random_tensor(rng, {kT, kU + 1, V}, -3, 3);
      const SmoothedKlResult r = smoothed_output_kl(ProbLattice::from_logits(logits), ttr.probs, scfg, dir);
      const Tensor gammas = r.student_smoothing.gammas;
      const auto n = testing::numeric_grad(logits, [&] {
        return testing::frozen_smoothed_kl(ProbLattice::from_logits(logits), t_smooth, gammas, scfg.prob_floor,
                                           student_first);
      });
      skl.add(testing::rel_error(r.grad_logits.values(), n));
    }
    {
      Tensor lp = testing::random_lattice(rng, kT, kU + 1, V, 3.0).log_probs();
      const RnntLossResult r = rnnt_loss(lp, y);
      const auto n = testing::numeric_grad(lp, [&] { return rnnt_loss(lp, y).loss; });
      rnnt.add(testing::rel_error(r.grad_logprobs.values(), n));
    }
    {
      // alpha * l_hidden + beta * (l_rnnt + smoothed KL), gammas frozen at the current point
      const double alpha = 1.0, beta = 1.0;
      const ForwardTrace tr = forward(student, x, y);
      const RnntLossResult rl = rnnt_loss(tr.probs.log_probs(), y);
      const SmoothedKlResult sk = smoothed_output_kl_cached(tr.probs, t_smooth, scfg, dir);
      const HiddenMseResult hm = hidden_mse(tr.hidden, ttr.hidden);
      Tensor g_logits = testing::rnnt_logit_grad(tr.probs, rl.grad_logprobs);
      for (std::size_t k = 0; k < g_logits.size(); ++k) g_logits[k] = beta * (g_logits[k] + sk.grad_logits[k]);
      HiddenStack g_hidden = hm.grad;
      for (auto* layers : {&g_hidden.encoder, &g_hidden.decoder}) {
        for (auto& t : *layers) {
          for (auto& v : t.values()) v *= alpha;
        }
      }
      const auto analytic = testing::flatten(backward(student, tr, g_logits, g_hidden));
      const Tensor gammas = sk.student_smoothing.gammas;
      auto loss = [&] {
        const ForwardTrace f = forward(student, x, y);
        return total_kd_loss(hidden_mse(f.hidden, ttr.hidden).loss, rnnt_loss(f.probs.log_probs(), y).loss,
                             testing::frozen_smoothed_kl(f.probs, t_smooth, gammas, scfg.prob_floor, student_first),
                             alpha, beta)
            .l_total;
      };
      e2e.add(testing::rel_error(analytic, testing::numeric_param_grad(student, loss)));
    }
  }
  const double secs = seconds_since(t0);
  bool pass = secs < kGradSeconds;
  std::vector<std::string> details;
  for (const GradCase* c : {&mse, &kl, &skl, &rnnt, &e2e}) {
    pass = pass && c->failures == 0;
    details.push_back(c->name + fmt(": worst relative error %.2e", c->worst) + ", failures " +
                      std::to_string(c->failures) + "/100");
  }
  details.push_back(fmt("d = 8, T = 5, U = 3, tolerance 1e-4; runtime %.1f s (limit 300 s)", secs));
  return report(4, pass, "gradient suite against central differences", details);
}

// ---- 5 and 6 -------------------------------------------------------------

const std::vector<std::string> kMatrixVariants = {"teacher",         "no-kd",      "two-stage", "two-stage-adaptive",
                                                  "two-stage-fixed", "stage1-only"};

std::pair<bool, bool> criteria5and6() {
  const auto t0 = Clock::now();
  const RunConfig cfg;
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 10; ++s) seeds.push_back(s);
  const MatrixResult m = run_matrix(cfg, seeds, kMatrixVariants, [&](const MatrixRow& r) {
    std::cerr << fmt("  [%6.0f s] ", seconds_since(t0)) << "seed " << r.seed << ' ' << r.variant
              << fmt(" noisy TER %.4f", r.noisy.ter) << '\n';
  });
  const double secs = seconds_since(t0);

  std::map<std::string, MatrixSummary> by;
  for (const auto& s : m.summary()) by[s.variant] = s;
  auto mean = [&](const char* v) { return by.at(v).ter_noisy_mean; };
  const std::vector<double> base = m.noisy_ter("no-kd");
  const std::vector<double> fixed = m.noisy_ter("two-stage-fixed");
  std::size_t fixed_worse = 0;
  for (std::size_t i = 0; i < base.size(); ++i) fixed_worse += fixed[i] > base[i] ? 1 : 0;

  const bool order = mean("teacher") < mean("two-stage-adaptive") &&
                     mean("two-stage-adaptive") <= mean("two-stage") && mean("two-stage") < mean("no-kd");
  const bool wins = by.at("two-stage-adaptive").wins_vs_no_kd >= kAdaptiveWins;
  const bool first = mean("stage1-only") > mean("no-kd");
  const bool fixed_ok = fixed_worse >= kFixedLosses;
  const bool timely = secs < kMatrixSeconds;

  std::vector<std::string> details = {"variant              noisy TER mean   sd       clean TER   first-emit  wins"};
  for (const auto& v : kMatrixVariants) {
    const MatrixSummary& s = by.at(v);
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %.4f           %.4f   %.4f      %.3f       %zu/10", v.c_str(),
                  s.ter_noisy_mean, s.ter_noisy_sd, s.ter_clean_mean, s.first_emission_mean, s.wins_vs_no_kd);
    details.push_back(line);
  }
  auto mark = [](bool ok) { return std::string(ok ? "ok  " : "FAIL"); };
  details.push_back(mark(order) + " ordering teacher < two-stage-adaptive <= two-stage < no-kd");
  details.push_back(mark(wins) + " two-stage-adaptive beats no-kd on " +
                    std::to_string(by.at("two-stage-adaptive").wins_vs_no_kd) + "/10 seeds (need 8)");
  details.push_back(mark(first) + " stage1-only worse than no-kd on the mean");
  details.push_back(mark(fixed_ok) + " two-stage-fixed worse than no-kd on " + std::to_string(fixed_worse) +
                    "/10 seeds (need 6)");
  details.push_back(mark(timely) + fmt(" runtime %.0f s (limit 1800 s)", secs));
  const bool pass5 = report(5, order && wins && first && fixed_ok && timely, "directional replication over seeds 1-10",
                            details);

  const double fa = by.at("two-stage-adaptive").first_emission_mean;
  const double fb = by.at("no-kd").first_emission_mean;
  const bool pass6 = report(6, fa <= fb, "latency surrogate (soft)",
                            {fmt("mean first-emission frame: two-stage-adaptive %.4f", fa) +
                             fmt(", no-kd %.4f (clean split)", fb)});
  return {pass5, pass6};
}

// ---- 7 -------------------------------------------------------------------

int run_cli(const std::string& args, std::string* out) {
  const std::string cmd = std::string(ATKD_CLI) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  char buf[4096];
  while (const std::size_t n = fread(buf, 1, sizeof buf, pipe)) out->append(buf, n);
  const int status = pclose(pipe);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

bool criterion7() {
  const fs::path base = fs::temp_directory_path() / "atkd_acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  {
    std::ofstream cfg(base / "run.json");
    cfg << R"({"task": {"train_size": 64, "eval_size": 16, "max_len": 5}, "model": {"hidden_dim": 8},
               "teacher": {"steps": 30, "batch_size": 8}, "student": {"steps": 30, "batch_size": 8}})";
  }
  std::mt19937_64 rng(1007);
  save_atkd((base / "lattice.atkd").string(), testing::random_lattice(rng, 4, 3, 5).probs());
  save_atkd((base / "teacher_lattice.atkd").string(), testing::random_lattice(rng, 4, 3, 5).probs());

  const std::string cfg = " --config " + (base / "run.json").string();
  const std::string lat = (base / "lattice.atkd").string();
  const std::string tlat = (base / "teacher_lattice.atkd").string();
  std::vector<std::string> failures;
  std::size_t commands = 0, files = 0;
  auto pipeline = [&](const std::string& tag, std::string* stdout_all) {
    const fs::path r = base / tag;
    fs::create_directories(r);
    const std::string d = (r / "data").string();
    const std::vector<std::string> cmds = {
        "synth" + cfg + " --seed 3 --out " + d,
        "train-teacher" + cfg + " --seed 3 --data " + d + " --out " + (r / "teacher").string() + " --report " +
            (r / "teacher.csv").string(),
        "distill" + cfg + " --seed 3 --data " + d + " --teacher " + (r / "teacher").string() + " --out " +
            (r / "student").string() + " --report " + (r / "student.csv").string(),
        "eval --model " + (r / "student").string() + " --data " + d,
        "matrix --quiet" + cfg + " --seeds 3 4 --variants no-kd two-stage-adaptive stage1-only --rows " +
            (r / "rows.csv").string() + " --out " + (r / "summary.csv").string(),
        "smooth --input " + lat + " --output " + (r / "smoothed.atkd").string(),
        "gamma --input " + lat,
        "rnnt-loss --probs " + lat + " --target 1,2 --grad " + (r / "grad.atkd").string(),
        "kd-loss --student " + lat + " --teacher " + tlat + " --target 1,2 --output-kd adaptive",
        "kd-loss --student " + lat + " --teacher " + tlat + " --target 1,2 --output-kd temperature --temperature 2",
    };
    for (const auto& c : cmds) {
      std::string out;
      const int rc = run_cli(c, &out);
      if (rc != 0) failures.push_back("exit " + std::to_string(rc) + ": " + c.substr(0, c.find(' ')));
      *stdout_all += "$ " + c.substr(0, c.find(' ')) + "\n" + out;
    }
    commands = cmds.size();
  };
  std::string out_a, out_b;
  pipeline("a", &out_a);
  pipeline("b", &out_b);
  const auto fa = snapshot(base / "a");
  const auto fb = snapshot(base / "b");
  files = fa.size();
  if (out_a != out_b) failures.push_back("stdout differs");
  if (fa.size() != fb.size()) failures.push_back("different file sets");
  for (const auto& [name, bytes] : fa) {
    const auto it = fb.find(name);
    if (it == fb.end() || it->second != bytes) failures.push_back("file differs: " + name);
  }
  fs::remove_all(base);
  std::vector<std::string> details = {std::to_string(commands) + " commands run twice, " + std::to_string(files) +
                                      " output files and all stdout compared byte for byte"};
  for (const auto& f : failures) details.push_back(f);
  return report(7, failures.empty() && files > 0, "determinism", details);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7};
  bool ok = true;
  try {
    if (wanted.count(1)) ok = criterion1() && ok;
    if (wanted.count(2)) ok = criterion2() && ok;
    if (wanted.count(3)) ok = criterion3() && ok;
    if (wanted.count(4)) ok = criterion4() && ok;
    if (wanted.count(5) || wanted.count(6)) {
      const auto [p5, p6] = criteria5and6();
      if (wanted.count(5)) ok = p5 && ok;
      (void)p6;  // soft: reported, not gating
    }
    if (wanted.count(7)) ok = criterion7() && ok;
  } catch (const std::exception& e) {
    std::cout << "[FAIL] aborted: " << e.what() << '\n';
    return 2;
  }
  return ok ? 0 : 1;
}
