// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "smoothing_kernels.hpp"

namespace atkd {
namespace {

void check_distribution(std::span<const double> dist) {
  if (dist.empty()) throw DimensionError("empty distribution");
  double sum = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0)) throw DomainError("distribution has a negative or NaN entry");
    sum += p;
  }
  if (sum == 0.0) throw DomainError("power transform of an all-zero vector");
}

}  // namespace

double SmoothingConfig::resolved_target(std::size_t vocab) const {
  return target_entropy.value_or(std::log(static_cast<double>(vocab)));
}

void SmoothingConfig::validate(std::size_t vocab) const {
  const double target = resolved_target(vocab);
  const double log_v = std::log(static_cast<double>(vocab));
  if (!(target > 0.0) || target > log_v + 1e-12) {
    throw DomainError("target entropy " + std::to_string(target) + " outside (0, log V = " +
                      std::to_string(log_v) + "]");
  }
  if (max_steps < 0) throw DomainError("smoothing steps must be >= 0");
  if (!(gamma_min >= 0.0 && gamma_min <= gamma_max)) throw DomainError("invalid gamma clamp interval");
  if (!(prob_floor >= 0.0 && prob_floor < 1.0)) throw DomainError("invalid probability floor");
}

void power_transform_into(std::span<const double> dist, double gamma, std::span<double> out) {
  if (!(gamma >= 0.0)) throw DomainError("power transform exponent must be >= 0");
  check_distribution(dist);
  const std::size_t len = dist.size();
  if (gamma == 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(len));
    return;
  }
  const double log_max = std::log(*std::max_element(dist.begin(), dist.end()));
  double sum = 0.0;
  for (std::size_t v = 0; v < len; ++v) {
    out[v] = dist[v] > 0.0 ? std::exp(gamma * (std::log(dist[v]) - log_max)) : 0.0;
    sum += out[v];
  }
  for (std::size_t v = 0; v < len; ++v) out[v] /= sum;
}

std::vector<double> power_transform(std::span<const double> dist, double gamma) {
  std::vector<double> out(dist.size());
  power_transform_into(dist, gamma, out);
  return out;
}

double transformed_entropy(std::span<const double> dist, double gamma) {
  if (!(gamma >= 0.0)) throw DomainError("power transform exponent must be >= 0");
  check_distribution(dist);
  if (gamma == 0.0) return std::log(static_cast<double>(dist.size()));
  // Scale Q^g by max^-g; the log-sum term absorbs the factor back.
  const double log_max = std::log(*std::max_element(dist.begin(), dist.end()));
  double scaled_sum = 0.0;
  double weighted_log = 0.0;
  for (double p : dist) {
    if (p <= 0.0) continue;
    const double lp = std::log(p);
    const double w = std::exp(gamma * (lp - log_max));
    scaled_sum += w;
    weighted_log += w * lp;
  }
  const double h = gamma * log_max + std::log(scaled_sum) - gamma * weighted_log / scaled_sum;
  return std::max(h, 0.0);
}

double taylor_entropy_approx(std::span<const double> dist, double gamma) {
  check_distribution(dist);
  double h = 0.0;
  double second = 0.0;
  for (double p : dist) {
    if (p <= 0.0) continue;
    const double lp = std::log(p);
    h -= p * lp;
    second += p * lp * lp;
  }
  return h + (h * h - second) * (gamma - 1.0);
}

double taylor_gamma_raw(std::span<const double> dist, double target_entropy, double degenerate_eps) {
  check_distribution(dist);
  double h = 0.0;
  double second = 0.0;
  for (double p : dist) {
    if (p <= 0.0) continue;
    const double lp = std::log(p);
    h -= p * lp;
    second += p * lp * lp;
  }
  const double denom = h * h - second;
  if (std::abs(denom) < degenerate_eps) return 1.0;
  return 1.0 + (target_entropy - h) / denom;
}

double taylor_gamma(std::span<const double> dist, double target_entropy, const SmoothingConfig& config) {
  const double raw = taylor_gamma_raw(dist, target_entropy, config.degenerate_eps);
  return std::clamp(raw, config.gamma_min, config.gamma_max);
}

double oracle_gamma(std::span<const double> dist, double target_entropy, double tol) {
  if (!(tol > 0.0)) throw DomainError("oracle tolerance must be positive");
  const double h_lo = transformed_entropy(dist, 1.0);
  const double h_hi = transformed_entropy(dist, 0.0);
  if (std::abs(h_lo - target_entropy) < tol) return 1.0;
  if (std::abs(h_hi - target_entropy) < tol) return 0.0;
  if (target_entropy < h_lo || target_entropy > h_hi) {
    throw RangeError("target entropy " + std::to_string(target_entropy) + " not reachable on gamma in [0, 1] (range [" +
                     std::to_string(h_lo) + ", " + std::to_string(h_hi) + "])");
  }
  // transformed_entropy is non-increasing in gamma.
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double residual = transformed_entropy(dist, mid) - target_entropy;
    if (std::abs(residual) < tol) return mid;
    if (residual > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw RangeError("gamma bisection did not reach tolerance");
}

void floor_and_renormalize(std::span<double> dist, double floor) {
  double sum = 0.0;
  for (double& x : dist) {
    x = std::max(x, floor);
    sum += x;
  }
  if (!(sum > 0.0)) throw DomainError("cannot renormalize an all-zero distribution");
  for (double& x : dist) x /= sum;
}

SmoothingResult adaptive_smooth(const ProbLattice& lattice, const SmoothingConfig& config) {
  const std::size_t vocab = lattice.vocab();
  config.validate(vocab);
  const double target = config.resolved_target(vocab);
  const auto steps = static_cast<std::size_t>(config.max_steps);
  const auto cells = static_cast<std::ptrdiff_t>(lattice.cells());

  Tensor smoothed(lattice.probs().shape());
  Tensor gammas = steps ? Tensor({lattice.t_len(), lattice.u_len(), steps}) : Tensor();
  Tensor trace({lattice.t_len(), lattice.u_len(), steps + 1});

  // Exceptions must not escape an OpenMP region; capture the first one.
  std::exception_ptr failure;
#pragma omp parallel
  {
    detail::CellScratch scratch;
    std::span<double> no_gammas;
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < cells; ++c) {
      try {
        const auto s = static_cast<std::size_t>(c);
        detail::smooth_cell(lattice.probs().slice(s), config, target, smoothed.slice(s),
                            steps ? gammas.slice(s) : no_gammas, trace.slice(s), scratch);
      } catch (...) {
#pragma omp critical(atkd_smooth_failure)
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);

  return SmoothingResult{ProbLattice(std::move(smoothed)), steps, std::move(gammas), std::move(trace)};
}

Tensor smooth_gradient(const ProbLattice& lattice, const Tensor& upstream, const Tensor& gammas,
                       const SmoothingConfig& config) {
  detail::check_gradient_shapes(lattice, upstream, gammas);
  Tensor grad(lattice.probs().shape());
  const auto cells = static_cast<std::ptrdiff_t>(lattice.cells());
  std::exception_ptr failure;
#pragma omp parallel
  {
    detail::CellScratch scratch;
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < cells; ++c) {
      try {
        const auto s = static_cast<std::size_t>(c);
        std::span<const double> cell_gammas = gammas.empty() ? std::span<const double>() : gammas.slice(s);
        detail::smooth_cell_gradient(lattice.probs().slice(s), upstream.slice(s), cell_gammas, config.prob_floor,
                                     grad.slice(s), scratch);
      } catch (...) {
#pragma omp critical(atkd_smooth_failure)
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
  return grad;
}

}  // namespace atkd
