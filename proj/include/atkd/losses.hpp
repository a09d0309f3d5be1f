// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include "atkd/distribution.hpp"
#include "atkd/smoothing.hpp"
#include "atkd/tensor.hpp"

namespace atkd {

struct RnntLossResult {
  double loss = 0.0;
  // dloss / dlog_probs, shape [T, U+1, V].
  Tensor grad_logprobs;
};

// Transducer negative log-likelihood by the log-space forward recursion over
// the (t, u) grid, with the occupancy gradient from the backward recursion.
// Blank is index 0; the path terminates with a blank from (T-1, U).
RnntLossResult rnnt_loss(const Tensor& log_probs, const TokenSequence& target);

// Sum over explicitly enumerated alignments. Guarded to T <= 6, U <= 4.
double rnnt_loss_bruteforce(const ProbLattice& probs, const TokenSequence& target);

struct HiddenMseResult {
  double loss = 0.0;
  HiddenStack grad;  // d loss / d student
};

// Sum over layers of the per-layer element-mean squared error.
HiddenMseResult hidden_mse(const HiddenStack& student, const HiddenStack& teacher);

enum class KlDirection {
  kStudentFirst,  // KL(Q^S || Q^T), argument order as written in the KD objective
  kTeacherFirst,  // KL(Q^T || Q^S), forward KL conventional in distillation
};

struct KlResult {
  double loss = 0.0;
  // d loss / d student logits, shape [T, U+1, V].
  Tensor grad_logits;
};

// Mean over cells of KL between temperature-scaled distributions, each side
// recomputed as softmax(log Q / tau). No tau^2 factor is applied.
KlResult output_kl(const ProbLattice& student, const ProbLattice& teacher, double temperature,
                   KlDirection direction = KlDirection::kStudentFirst);

struct SmoothedKlResult {
  double loss = 0.0;
  Tensor grad_logits;
  SmoothingResult student_smoothing;
};

// Both lattices go through adaptive_smooth with their own per-cell gammas;
// then the mean per-cell KL of the smoothed lattices. The gradient flows
// through the student's smoothing map with gammas frozen; the teacher side is
// constant.
SmoothedKlResult smoothed_output_kl(const ProbLattice& student, const ProbLattice& teacher,
                                    const SmoothingConfig& config,
                                    KlDirection direction = KlDirection::kStudentFirst);

// Same loss when the teacher side is already smoothed (cached across steps).
SmoothedKlResult smoothed_output_kl_cached(const ProbLattice& student, const ProbLattice& smoothed_teacher,
                                           const SmoothingConfig& config,
                                           KlDirection direction = KlDirection::kStudentFirst);

struct KdLossBreakdown {
  double l_rnnt = 0.0;
  double l_hidden = 0.0;
  double l_output_kl = 0.0;
  double l_total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

// l_total = alpha * l_hidden + beta * (l_rnnt + l_output_kl).
KdLossBreakdown total_kd_loss(double l_hidden, double l_rnnt, double l_output_kl, double alpha, double beta);

}  // namespace atkd
