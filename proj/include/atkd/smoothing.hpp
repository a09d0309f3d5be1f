// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

// Entropy-targeted power-transformation smoothing of output distributions.
//
// A distribution Q is smoothed by Q^g / sum(Q^g). The exponent g is chosen so
// that the entropy of the result moves toward a target entropy (log V by
// default). A first-order Taylor expansion of the transformed entropy around
// g = 1 gives a closed form for g; iterating it Z times per lattice cell is the
// adaptive smoother. A bisection solver on the exact transformed entropy is
// kept alongside as a validation oracle.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "atkd/distribution.hpp"
#include "atkd/tensor.hpp"

namespace atkd {

struct SmoothingConfig {
  // Target entropy in nats; nullopt means log V of the lattice being smoothed.
  std::optional<double> target_entropy;
  // Number of Taylor/power-transform iterations Z. Zero means identity.
  int max_steps = 2;
  double gamma_min = 0.0;
  double gamma_max = 1.0;
  // |H^2 - E[(log Q)^2]| below this is treated as degenerate (gamma = 1).
  double degenerate_eps = 1e-12;
  // Entries are floored here and renormalized before the first step.
  double prob_floor = 1e-12;

  double resolved_target(std::size_t vocab) const;
  void validate(std::size_t vocab) const;
  bool operator==(const SmoothingConfig&) const = default;
};

struct SmoothingResult {
  ProbLattice smoothed;
  std::size_t steps = 0;
  // [T, U+1, Z] per-cell gamma of each step; empty when Z = 0.
  Tensor gammas;
  // [T, U+1, Z+1] entropy before the first step and after every step.
  Tensor entropy_trace;
};

// Q^gamma / sum(Q^gamma), evaluated in log space. gamma = 0 yields the uniform
// distribution (0^0 = 1). Throws DomainError for gamma < 0, negative or all-zero input.
std::vector<double> power_transform(std::span<const double> dist, double gamma);
void power_transform_into(std::span<const double> dist, double gamma, std::span<double> out);

// Entropy of power_transform(dist, gamma) via the closed form
//   log sum Q^g - g * sum(Q^g log Q) / sum(Q^g).
double transformed_entropy(std::span<const double> dist, double gamma);

// First-order expansion around gamma = 1:
//   H + (H^2 - E[(log Q)^2]) (gamma - 1).
double taylor_entropy_approx(std::span<const double> dist, double gamma);

// Unclamped 1 + (target - H) / (H^2 - E[(log Q)^2]); 1 for a degenerate denominator.
double taylor_gamma_raw(std::span<const double> dist, double target_entropy, double degenerate_eps = 1e-12);

// taylor_gamma_raw clamped to [config.gamma_min, config.gamma_max].
double taylor_gamma(std::span<const double> dist, double target_entropy, const SmoothingConfig& config = {});

// Bisection over gamma in [0, 1] on the exact transformed entropy. Returns
// gamma* with |transformed_entropy(dist, gamma*) - target| < tol. Throws
// RangeError when the target is not reachable on [0, 1].
double oracle_gamma(std::span<const double> dist, double target_entropy, double tol);

// Floors entries at `floor` and renormalizes, in place.
void floor_and_renormalize(std::span<double> dist, double floor);

// Runs the iterative smoother independently on every (t, u) cell. Cells are
// distributed over OpenMP threads; output is bitwise independent of the
// thread count.
SmoothingResult adaptive_smooth(const ProbLattice& lattice, const SmoothingConfig& config);

// Vector-Jacobian product of the per-cell map
//   floor/renormalize -> (Q -> Q^g / sum Q^g) for each stored gamma
// with gammas held fixed. `upstream` is dL/dQ^Z, the result is dL/dQ.
Tensor smooth_gradient(const ProbLattice& lattice, const Tensor& upstream, const Tensor& gammas,
                       const SmoothingConfig& config);

namespace serial {

// Single-threaded reference for adaptive_smooth and smooth_gradient.
SmoothingResult adaptive_smooth(const ProbLattice& lattice, const SmoothingConfig& config);
Tensor smooth_gradient(const ProbLattice& lattice, const Tensor& upstream, const Tensor& gammas,
                       const SmoothingConfig& config);

}  // namespace serial

}  // namespace atkd
