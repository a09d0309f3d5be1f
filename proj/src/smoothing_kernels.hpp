// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

// Per-cell kernels shared by the OpenMP and serial lattice drivers.

#include <span>
#include <vector>

#include "atkd/smoothing.hpp"

namespace atkd::detail {

struct CellScratch {
  std::vector<double> q;
  std::vector<double> next;
  std::vector<double> grad;
  std::vector<std::vector<double>> history;
};

// Smooths one cell. `out` receives Q^Z, `gammas` Z values, `trace` Z+1 entropies.
inline void smooth_cell(std::span<const double> cell, const SmoothingConfig& config, double target,
                        std::span<double> out, std::span<double> gammas, std::span<double> trace,
                        CellScratch& scratch) {
  scratch.q.assign(cell.begin(), cell.end());
  scratch.next.resize(cell.size());
  floor_and_renormalize(scratch.q, config.prob_floor);
  trace[0] = entropy(scratch.q);
  for (int z = 0; z < config.max_steps; ++z) {
    const double gamma = taylor_gamma(scratch.q, target, config);
    power_transform_into(scratch.q, gamma, scratch.next);
    scratch.q.swap(scratch.next);
    gammas[z] = gamma;
    trace[z + 1] = entropy(scratch.q);
  }
  std::copy(scratch.q.begin(), scratch.q.end(), out.begin());
}

inline void smooth_cell_gradient(std::span<const double> cell, std::span<const double> upstream,
                                 std::span<const double> gammas, double floor, std::span<double> grad_out,
                                 CellScratch& scratch) {
  const std::size_t len = cell.size();
  const std::size_t steps = gammas.size();
  scratch.history.resize(steps + 1);
  auto& q0 = scratch.history[0];
  q0.assign(cell.begin(), cell.end());
  double floored_sum = 0.0;
  for (double& x : q0) {
    x = std::max(x, floor);
    floored_sum += x;
  }
  for (double& x : q0) x /= floored_sum;
  for (std::size_t z = 0; z < steps; ++z) {
    scratch.history[z + 1].resize(len);
    power_transform_into(scratch.history[z], gammas[z], scratch.history[z + 1]);
  }

  auto& g = scratch.grad;
  g.assign(upstream.begin(), upstream.end());
  for (std::size_t z = steps; z-- > 0;) {
    const auto& in = scratch.history[z];
    const auto& f = scratch.history[z + 1];
    double dot = 0.0;
    for (std::size_t v = 0; v < len; ++v) dot += g[v] * f[v];
    for (std::size_t v = 0; v < len; ++v) {
      g[v] = in[v] > 0.0 ? gammas[z] * f[v] / in[v] * (g[v] - dot) : 0.0;
    }
  }
  // Renormalization after the floor; floored entries are locally constant.
  double dot = 0.0;
  for (std::size_t v = 0; v < len; ++v) dot += g[v] * q0[v];
  for (std::size_t v = 0; v < len; ++v) {
    grad_out[v] = cell[v] > floor ? (g[v] - dot) / floored_sum : 0.0;
  }
}

inline void check_gradient_shapes(const ProbLattice& lattice, const Tensor& upstream, const Tensor& gammas) {
  if (upstream.shape() != lattice.probs().shape()) {
    throw DimensionError("smooth_gradient upstream shape " + shape_string(upstream.shape()) +
                         " does not match lattice " + shape_string(lattice.probs().shape()));
  }
  if (gammas.empty()) return;
  if (gammas.rank() != 3 || gammas.dim(0) != lattice.t_len() || gammas.dim(1) != lattice.u_len()) {
    throw DimensionError("smooth_gradient gammas shape " + shape_string(gammas.shape()) +
                         " does not match lattice cells");
  }
}

}  // namespace atkd::detail
