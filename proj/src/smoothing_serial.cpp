// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

// Single-threaded reference drivers; kept for testing the OpenMP drivers and
// for benchmarking against them.

#include "atkd/smoothing.hpp"
#include "smoothing_kernels.hpp"

namespace atkd::serial {

SmoothingResult adaptive_smooth(const ProbLattice& lattice, const SmoothingConfig& config) {
  const std::size_t vocab = lattice.vocab();
  config.validate(vocab);
  const double target = config.resolved_target(vocab);
  const auto steps = static_cast<std::size_t>(config.max_steps);

  Tensor smoothed(lattice.probs().shape());
  Tensor gammas = steps ? Tensor({lattice.t_len(), lattice.u_len(), steps}) : Tensor();
  Tensor trace({lattice.t_len(), lattice.u_len(), steps + 1});
  detail::CellScratch scratch;
  for (std::size_t s = 0; s < lattice.cells(); ++s) {
    detail::smooth_cell(lattice.probs().slice(s), config, target, smoothed.slice(s),
                        steps ? gammas.slice(s) : std::span<double>(), trace.slice(s), scratch);
  }
  return SmoothingResult{ProbLattice(std::move(smoothed)), steps, std::move(gammas), std::move(trace)};
}

Tensor smooth_gradient(const ProbLattice& lattice, const Tensor& upstream, const Tensor& gammas,
                       const SmoothingConfig& config) {
  detail::check_gradient_shapes(lattice, upstream, gammas);
  Tensor grad(lattice.probs().shape());
  detail::CellScratch scratch;
  for (std::size_t s = 0; s < lattice.cells(); ++s) {
    std::span<const double> cell_gammas = gammas.empty() ? std::span<const double>() : gammas.slice(s);
    detail::smooth_cell_gradient(lattice.probs().slice(s), upstream.slice(s), cell_gammas, config.prob_floor,
                                 grad.slice(s), scratch);
  }
  return grad;
}

}  // namespace atkd::serial
