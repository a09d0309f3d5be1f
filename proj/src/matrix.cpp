// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>

#include "atkd/tensor_io.hpp"

namespace atkd {
namespace {

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

// Sample standard deviation; 0 for fewer than two values.
double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::vector<double> MatrixResult::noisy_ter(const std::string& variant) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.variant == variant) out.push_back(r.noisy.ter);
  }
  return out;
}

std::vector<double> MatrixResult::first_emission(const std::string& variant) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.variant == variant) out.push_back(r.clean.mean_first_emission_frame);
  }
  return out;
}

std::vector<MatrixSummary> MatrixResult::summary() const {
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  std::map<std::uint64_t, double> baseline;
  for (const auto& r : rows) {
    if (r.variant == "no-kd") baseline[r.seed] = r.noisy.ter;
  }
  const std::vector<double> baseline_ter = noisy_ter("no-kd");

  std::vector<MatrixSummary> out;
  for (const auto& name : order) {
    MatrixSummary s;
    s.variant = name;
    std::vector<double> clean, noisy, first;
    for (const auto& r : rows) {
      if (r.variant != name) continue;
      clean.push_back(r.clean.ter);
      noisy.push_back(r.noisy.ter);
      first.push_back(r.clean.mean_first_emission_frame);
      auto it = baseline.find(r.seed);
      if (it != baseline.end() && r.noisy.ter < it->second) ++s.wins_vs_no_kd;
    }
    s.seeds = noisy.size();
    s.ter_clean_mean = mean(clean);
    s.ter_clean_sd = stddev(clean);
    s.ter_noisy_mean = mean(noisy);
    s.ter_noisy_sd = stddev(noisy);
    s.first_emission_mean = mean(first);
    const double base = mean(baseline_ter);
    s.rel_reduction_noisy = base > 0.0 ? relative_reduction(base, s.ter_noisy_mean) : 0.0;
    out.push_back(s);
  }
  return out;
}

MatrixResult run_matrix(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                        const std::vector<std::string>& variants, const MatrixProgress& progress) {
  if (seeds.empty()) throw UsageError("matrix needs at least one seed");
  if (variants.empty()) throw UsageError("matrix needs at least one variant");
  for (const auto& v : variants) {
    if (v == "teacher") continue;
    (void)base.schedule(v);  // rejects unknown names before any training
  }
  const bool share_stage1 =
      std::find(variants.begin(), variants.end(), "two-stage-adaptive") != variants.end() &&
      std::find(variants.begin(), variants.end(), "stage1-only") != variants.end();

  MatrixResult result;
  for (std::uint64_t seed : seeds) {
    const RunConfig run = base.with_seed(seed);
    const Corpus corpus = synth_generate(run.task);
    const ToyTransducer teacher =
        train_teacher(run.teacher_model(), corpus.train, run.teacher.steps, run.teacher.optimizer, seed);
    auto emit = [&](const std::string& name, const ToyTransducer& model) {
      MatrixRow row{name, seed, evaluate(model, corpus.clean), evaluate(model, corpus.noisy)};
      if (progress) progress(row);
      result.rows.push_back(row);
    };
    std::optional<ToyTransducer> stage1_snapshot;
    for (const auto& v : variants) {
      if (v == "teacher") {
        emit(v, teacher);
        continue;
      }
      if (v == "stage1-only" && share_stage1) continue;
      StageCallback keep_stage1;
      if (v == "two-stage-adaptive" && share_stage1) {
        keep_stage1 = [&stage1_snapshot](int stage, const ToyTransducer& s) {
          if (stage == 1) stage1_snapshot = s;
        };
      }
      const ToyTransducer student = train_student(teacher, run.student_model(), run.schedule(v), corpus.train,
                                                  run.student.optimizer, seed, nullptr, keep_stage1);
      emit(v, student);
    }
    if (share_stage1) emit("stage1-only", *stage1_snapshot);
  }
  return result;
}

void write_matrix_csv(std::ostream& out, const MatrixResult& result) {
  out << "variant,seeds,ter_clean_mean,ter_clean_sd,ter_noisy_mean,ter_noisy_sd,first_emission_mean,"
         "rel_reduction_noisy_pct,wins_vs_no_kd\n";
  for (const auto& s : result.summary()) {
    out << s.variant << ',' << s.seeds << ',' << format_double(s.ter_clean_mean) << ','
        << format_double(s.ter_clean_sd) << ',' << format_double(s.ter_noisy_mean) << ','
        << format_double(s.ter_noisy_sd) << ',' << format_double(s.first_emission_mean) << ','
        << format_double(s.rel_reduction_noisy) << ',' << s.wins_vs_no_kd << '\n';
  }
}

void write_matrix_rows_csv(std::ostream& out, const MatrixResult& result) {
  out << "variant,seed,ter_clean,ter_noisy,first_emission_clean,first_emission_noisy,silent_noisy\n";
  for (const auto& r : result.rows) {
    out << r.variant << ',' << r.seed << ',' << format_double(r.clean.ter) << ',' << format_double(r.noisy.ter)
        << ',' << format_double(r.clean.mean_first_emission_frame) << ','
        << format_double(r.noisy.mean_first_emission_frame) << ',' << r.noisy.silent_utterances << '\n';
  }
}

}  // namespace atkd
