// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "atkd/config.hpp"
#include "atkd/engine.hpp"

namespace atkd {

// One trained model evaluated on both held-out splits.
struct MatrixRow {
  std::string variant;  // "teacher" or a schedule variant
  std::uint64_t seed = 0;
  EvalMetrics clean;
  EvalMetrics noisy;
};

struct MatrixSummary {
  std::string variant;
  std::size_t seeds = 0;
  double ter_clean_mean = 0.0;
  double ter_clean_sd = 0.0;
  double ter_noisy_mean = 0.0;
  double ter_noisy_sd = 0.0;
  double first_emission_mean = 0.0;
  // Relative noisy-TER reduction of the mean against the no-kd mean (percent).
  double rel_reduction_noisy = 0.0;
  // Seeds where this variant's noisy TER is strictly below no-kd's.
  std::size_t wins_vs_no_kd = 0;
};

struct MatrixResult {
  std::vector<MatrixRow> rows;

  std::vector<MatrixSummary> summary() const;
  // Per-seed noisy TER of a variant, in seed order.
  std::vector<double> noisy_ter(const std::string& variant) const;
  std::vector<double> first_emission(const std::string& variant) const;
};

using MatrixProgress = std::function<void(const MatrixRow&)>;

// For every seed: generate the corpus, train the teacher, then train and
// evaluate each requested student variant. "stage1-only" is the stage-1
// snapshot of the two-stage-adaptive run when both are requested.
MatrixResult run_matrix(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                        const std::vector<std::string>& variants, const MatrixProgress& progress = nullptr);

// Summary CSV columns:
// variant,seeds,ter_clean_mean,ter_clean_sd,ter_noisy_mean,ter_noisy_sd,
// first_emission_mean,rel_reduction_noisy_pct,wins_vs_no_kd
void write_matrix_csv(std::ostream& out, const MatrixResult& result);
// Per-seed CSV columns:
// variant,seed,ter_clean,ter_noisy,first_emission_clean,first_emission_noisy,silent_noisy
void write_matrix_rows_csv(std::ostream& out, const MatrixResult& result);

}  // namespace atkd
