// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atkd/config.hpp"
#include "atkd/distribution.hpp"
#include "atkd/engine.hpp"
#include "atkd/losses.hpp"
#include "atkd/matrix.hpp"
#include "atkd/smoothing.hpp"
#include "atkd/synth.hpp"
#include "atkd/tensor_io.hpp"

namespace {

using namespace atkd;

int g_precision = 6;

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", g_precision, v);
  return buf;
}

TokenSequence parse_tokens(const std::string& text) {
  std::string s = text;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(s);
  TokenSequence out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      throw UsageError("bad token '" + tok + "'");
    }
    if (used != tok.size()) throw UsageError("bad token '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

// "max" means log V of the input; otherwise a number of nats.
std::optional<double> parse_target(const std::string& text) {
  if (text == "max") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("--target-entropy expects 'max' or a number, got '" + text + "'");
}

// Rank 1 [V] and rank 2 [N, V] inputs become [1, 1, V] and [N, 1, V].
ProbLattice as_lattice(const Tensor& t) {
  switch (t.rank()) {
    case 1:
      return ProbLattice(Tensor({1, 1, t.dim(0)}, t.values()));
    case 2:
      return ProbLattice(Tensor({t.dim(0), 1, t.dim(1)}, t.values()));
    case 3:
      return ProbLattice(t);
    default:
      throw DimensionError("expected a rank 1, 2 or 3 tensor, got " + shape_string(t.shape()));
  }
}

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  return seed ? c.with_seed(*seed) : c;
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  body(out);
  if (!out) throw Error("write failed for " + path);
}

void print_eval_header() { std::cout << "split,ter,mean_first_emission_frame,utterances,silent_utterances\n"; }

void print_eval_row(const std::string& split, const EvalMetrics& m) {
  std::cout << split << ',' << num(m.ter) << ',' << num(m.mean_first_emission_frame) << ',' << m.utterances << ','
            << m.silent_utterances << '\n';
}

struct SmoothFlags {
  std::string target = "max";
  int steps = 2;
};

SmoothingConfig smoothing_from_flags(const SmoothFlags& f) {
  SmoothingConfig c;
  c.target_entropy = parse_target(f.target);
  c.max_steps = f.steps;
  return c;
}

void add_smooth_flags(CLI::App* cmd, SmoothFlags& f) {
  cmd->add_option("--target-entropy", f.target, "target entropy in nats, or 'max' for log V")
      ->capture_default_str();
  cmd->add_option("--steps", f.steps, "number of smoothing iterations Z")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atkd: adaptive two-stage transducer distillation workbench"};
  app.require_subcommand(1);
  app.add_option("--precision", g_precision, "decimals for numbers printed to stdout")->capture_default_str();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration JSON");
    cmd->add_option("--seed", seed, "replace every seed in the configuration");
  };

  // synth
  std::string out_path;
  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  add_config(synth);
  synth->add_option("--out", out_path, "corpus directory")->required();

  // train-teacher
  std::string data_dir, report_path;
  auto* teach = app.add_subcommand("train-teacher", "train the full-context teacher");
  add_config(teach);
  teach->add_option("--data", data_dir, "corpus directory")->required();
  teach->add_option("--out", out_path, "checkpoint directory")->required();
  teach->add_option("--report", report_path, "per-step training CSV");

  // distill
  std::string teacher_dir, variant;
  auto* distill = app.add_subcommand("distill", "train a streaming student from a teacher checkpoint");
  add_config(distill);
  distill->add_option("--data", data_dir, "corpus directory")->required();
  distill->add_option("--teacher", teacher_dir, "teacher checkpoint directory")->required();
  distill->add_option("--out", out_path, "checkpoint directory")->required();
  distill->add_option("--variant", variant, "schedule variant (overrides the configuration)");
  distill->add_option("--report", report_path, "per-step training CSV");

  // eval
  std::string model_dir, split = "all";
  auto* eval = app.add_subcommand("eval", "token error rate and first-emission frame of a checkpoint");
  eval->add_option("--model", model_dir, "checkpoint directory")->required();
  eval->add_option("--data", data_dir, "corpus directory")->required();
  eval->add_option("--split", split, "train, clean, noisy or all")
      ->check(CLI::IsMember({"train", "clean", "noisy", "all"}))
      ->capture_default_str();

  // matrix
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants;
  std::string rows_path;
  bool quiet = false;
  auto* matrix = app.add_subcommand("matrix", "train every variant over several seeds and compare");
  matrix->add_option("--config", config_path, "run configuration JSON");
  matrix->add_option("--seeds", seeds, "seed list (overrides the configuration)")->delimiter(',');
  matrix->add_option("--variants", variants, "variant list (overrides the configuration)")->delimiter(',');
  matrix->add_option("--out", out_path, "summary CSV (default: stdout)");
  matrix->add_option("--rows", rows_path, "per-seed CSV");
  matrix->add_flag("--quiet", quiet, "no progress on stderr");

  // smooth
  std::string input_path, output_path;
  SmoothFlags smooth_flags;
  auto* smooth = app.add_subcommand("smooth", "adaptive entropy smoothing of probability cells");
  smooth->add_option("--input", input_path, "ATKD probabilities, last axis is the vocabulary")->required();
  smooth->add_option("--output", output_path, "write the smoothed lattice [T, U+1, V] as ATKD");
  add_smooth_flags(smooth, smooth_flags);

  // gamma
  SmoothFlags gamma_flags;
  double oracle_tol = 1e-12;
  auto* gamma = app.add_subcommand("gamma", "per-cell Taylor and bisection exponents");
  gamma->add_option("--input", input_path, "ATKD probabilities, last axis is the vocabulary")->required();
  gamma->add_option("--target-entropy", gamma_flags.target, "target entropy in nats, or 'max' for log V")
      ->capture_default_str();
  gamma->add_option("--tol", oracle_tol, "bisection tolerance")->capture_default_str();

  // rnnt-loss
  std::string probs_path, logprobs_path, logits_path, target_text, grad_path;
  auto* rnnt = app.add_subcommand("rnnt-loss", "transducer loss of a lattice and target");
  auto* g_probs = rnnt->add_option("--probs", probs_path, "ATKD probabilities [T, U+1, V]");
  auto* g_logp = rnnt->add_option("--log-probs", logprobs_path, "ATKD log-probabilities [T, U+1, V]");
  auto* g_logits = rnnt->add_option("--logits", logits_path, "ATKD joint logits [T, U+1, V]");
  g_probs->excludes(g_logp)->excludes(g_logits);
  g_logp->excludes(g_logits);
  rnnt->add_option("--target", target_text, "target tokens, space or comma separated")->required();
  rnnt->add_option("--grad", grad_path, "write d loss / d log-probs as ATKD");

  // kd-loss
  std::string student_path, teacher_path, output_kd = "adaptive", direction = "student-first";
  std::vector<std::string> student_hidden, teacher_hidden;
  double alpha = 0.01, beta = 1.0, temperature = 1.0;
  SmoothFlags kd_flags;
  auto* kd = app.add_subcommand("kd-loss", "combined distillation loss of a student/teacher pair");
  kd->add_option("--student", student_path, "ATKD student probabilities [T, U+1, V]")->required();
  kd->add_option("--teacher", teacher_path, "ATKD teacher probabilities [T, U+1, V]")->required();
  kd->add_option("--target", target_text, "target tokens for the transducer term")->required();
  kd->add_option("--student-hidden", student_hidden, "ATKD hidden layers, comma separated")->delimiter(',');
  kd->add_option("--teacher-hidden", teacher_hidden, "ATKD hidden layers, comma separated")->delimiter(',');
  kd->add_option("--alpha", alpha, "hidden-layer weight")->capture_default_str();
  kd->add_option("--beta", beta, "output weight")->capture_default_str();
  kd->add_option("--output-kd", output_kd, "none, temperature or adaptive")
      ->check(CLI::IsMember({"none", "temperature", "adaptive"}))
      ->capture_default_str();
  kd->add_option("--temperature", temperature, "softmax temperature for --output-kd temperature")
      ->capture_default_str();
  kd->add_option("--direction", direction, "student-first or teacher-first")
      ->check(CLI::IsMember({"student-first", "teacher-first"}))
      ->capture_default_str();
  add_smooth_flags(kd, kd_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
    return 1;
  }

  try {
    if (synth->parsed()) {
      const RunConfig c = load_config(config_path, seed);
      write_corpus(out_path, c.task, synth_generate(c.task));
    } else if (teach->parsed()) {
      const RunConfig c = load_config(config_path, seed);
      const Corpus corpus = read_corpus(data_dir);
      TrainReport report;
      const ToyTransducer teacher =
          train_teacher(c.teacher_model(), corpus.train, c.teacher.steps, c.teacher.optimizer, c.model.seed, &report);
      save_checkpoint(out_path, teacher);
      if (!report_path.empty()) write_file(report_path, [&](std::ostream& o) { write_report_csv(o, report); });
      print_eval_header();
      print_eval_row("clean", evaluate(teacher, corpus.clean));
      print_eval_row("noisy", evaluate(teacher, corpus.noisy));
    } else if (distill->parsed()) {
      RunConfig c = load_config(config_path, seed);
      if (!variant.empty()) c.distill.variant = variant;
      const Corpus corpus = read_corpus(data_dir);
      const ToyTransducer teacher = load_checkpoint(teacher_dir);
      TrainReport report;
      const ToyTransducer student = train_student(teacher, c.student_model(), c.schedule(), corpus.train,
                                                  c.student.optimizer, c.model.seed, &report);
      save_checkpoint(out_path, student);
      if (!report_path.empty()) write_file(report_path, [&](std::ostream& o) { write_report_csv(o, report); });
      print_eval_header();
      print_eval_row("clean", evaluate(student, corpus.clean));
      print_eval_row("noisy", evaluate(student, corpus.noisy));
    } else if (eval->parsed()) {
      const ToyTransducer model = load_checkpoint(model_dir);
      const Corpus corpus = read_corpus(data_dir);
      print_eval_header();
      if (split == "train" || split == "all") print_eval_row("train", evaluate(model, corpus.train));
      if (split == "clean" || split == "all") print_eval_row("clean", evaluate(model, corpus.clean));
      if (split == "noisy" || split == "all") print_eval_row("noisy", evaluate(model, corpus.noisy));
    } else if (matrix->parsed()) {
      const RunConfig c = load_config(config_path, std::nullopt);
      const auto& s = seeds.empty() ? c.matrix.seeds : seeds;
      const auto& v = variants.empty() ? c.matrix.variants : variants;
      MatrixProgress progress;
      if (!quiet) {
        progress = [](const MatrixRow& r) {
          std::cerr << "seed " << r.seed << ' ' << r.variant << ": noisy TER " << format_double(r.noisy.ter) << '\n';
        };
      }
      const MatrixResult result = run_matrix(c, s, v, progress);
      if (out_path.empty()) {
        write_matrix_csv(std::cout, result);
      } else {
        write_file(out_path, [&](std::ostream& o) { write_matrix_csv(o, result); });
      }
      if (!rows_path.empty()) write_file(rows_path, [&](std::ostream& o) { write_matrix_rows_csv(o, result); });
    } else if (smooth->parsed()) {
      const ProbLattice q = as_lattice(load_atkd(input_path));
      const SmoothingResult r = adaptive_smooth(q, smoothing_from_flags(smooth_flags));
      const auto Z = static_cast<std::size_t>(smooth_flags.steps);
      std::cout << "t,u";
      for (std::size_t z = 1; z <= Z; ++z) std::cout << ",gamma_" << z;
      for (std::size_t z = 0; z <= Z; ++z) std::cout << ",entropy_" << z;
      std::cout << '\n';
      for (std::size_t t = 0; t < q.t_len(); ++t) {
        for (std::size_t u = 0; u < q.u_len(); ++u) {
          std::cout << t << ',' << u;
          for (std::size_t z = 0; z < Z; ++z) std::cout << ',' << num(r.gammas.at(t, u, z));
          for (std::size_t z = 0; z <= Z; ++z) std::cout << ',' << num(r.entropy_trace.at(t, u, z));
          std::cout << '\n';
        }
      }
      if (!output_path.empty()) save_atkd(output_path, r.smoothed.probs());
    } else if (gamma->parsed()) {
      const ProbLattice q = as_lattice(load_atkd(input_path));
      SmoothingConfig cfg;
      cfg.target_entropy = parse_target(gamma_flags.target);
      const double target = cfg.resolved_target(q.vocab());
      std::cout << "t,u,entropy,gamma_raw,gamma_taylor,gamma_oracle\n";
      for (std::size_t t = 0; t < q.t_len(); ++t) {
        for (std::size_t u = 0; u < q.u_len(); ++u) {
          const auto cell = q.cell(t, u);
          std::cout << t << ',' << u << ',' << num(entropy(cell)) << ','
                    << num(taylor_gamma_raw(cell, target, cfg.degenerate_eps)) << ','
                    << num(taylor_gamma(cell, target, cfg)) << ',';
          // Empty when no exponent in [0, 1] reaches the target.
          try {
            std::cout << num(oracle_gamma(cell, target, oracle_tol));
          } catch (const RangeError&) {
          }
          std::cout << '\n';
        }
      }
    } else if (rnnt->parsed()) {
      Tensor log_probs;
      if (!probs_path.empty()) {
        log_probs = ProbLattice(load_atkd(probs_path)).log_probs();
      } else if (!logprobs_path.empty()) {
        log_probs = load_atkd(logprobs_path);
      } else if (!logits_path.empty()) {
        log_probs = log_softmax(load_atkd(logits_path));
      } else {
        throw UsageError("rnnt-loss needs one of --probs, --log-probs, --logits");
      }
      const RnntLossResult r = rnnt_loss(log_probs, parse_tokens(target_text));
      std::cout << num(r.loss) << '\n';
      if (!grad_path.empty()) save_atkd(grad_path, r.grad_logprobs);
    } else if (kd->parsed()) {
      const ProbLattice student(load_atkd(student_path));
      const ProbLattice teacher(load_atkd(teacher_path));
      const double l_rnnt = rnnt_loss(student.log_probs(), parse_tokens(target_text)).loss;
      const KlDirection dir = direction == "teacher-first" ? KlDirection::kTeacherFirst : KlDirection::kStudentFirst;
      double l_kl = 0.0;
      if (output_kd == "temperature") {
        l_kl = output_kl(student, teacher, temperature, dir).loss;
      } else if (output_kd == "adaptive") {
        l_kl = smoothed_output_kl(student, teacher, smoothing_from_flags(kd_flags), dir).loss;
      }
      if (student_hidden.size() != teacher_hidden.size()) {
        throw UsageError("--student-hidden and --teacher-hidden need the same number of layers");
      }
      HiddenStack hs, ht;
      for (const auto& p : student_hidden) hs.encoder.push_back(load_atkd(p));
      for (const auto& p : teacher_hidden) ht.encoder.push_back(load_atkd(p));
      const double l_hidden = hs.encoder.empty() ? 0.0 : hidden_mse(hs, ht).loss;
      const KdLossBreakdown b = total_kd_loss(l_hidden, l_rnnt, l_kl, alpha, beta);
      std::cout << "l_hidden,l_rnnt,l_kl,alpha,beta,l_total\n"
                << num(b.l_hidden) << ',' << num(b.l_rnnt) << ',' << num(b.l_output_kl) << ',' << num(b.alpha) << ','
                << num(b.beta) << ',' << num(b.l_total) << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
