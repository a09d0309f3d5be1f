// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace atkd {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(-std::abs(a - b)));
}

void check_same_lattice_shape(const ProbLattice& a, const ProbLattice& b) {
  if (a.probs().shape() != b.probs().shape()) {
    throw DimensionError("lattice shape mismatch: " + shape_string(a.probs().shape()) + " vs " +
                         shape_string(b.probs().shape()));
  }
}

// log softmax(log(p) / tau) for one cell.
void tempered_log_probs(std::span<const double> probs, double temperature, std::span<double> out) {
  double mx = kNegInf;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    out[v] = probs[v] > 0.0 ? std::log(probs[v]) / temperature : kNegInf;
    mx = std::max(mx, out[v]);
  }
  double sum = 0.0;
  for (double x : out) sum += x == kNegInf ? 0.0 : std::exp(x - mx);
  const double lse = mx + std::log(sum);
  for (double& x : out) x = x == kNegInf ? kNegInf : x - lse;
}

// KL between two cells given in log space, plus dKL/d(student log-space logits) scaled by 1/tau.
double cell_kl(std::span<const double> log_s, std::span<const double> log_t, KlDirection direction,
               double inv_temperature, std::span<double> grad) {
  const std::size_t len = log_s.size();
  double kl = 0.0;
  if (direction == KlDirection::kStudentFirst) {
    for (std::size_t v = 0; v < len; ++v) {
      if (log_s[v] == kNegInf) continue;
      if (log_t[v] == kNegInf) throw DomainError("KL support violation: teacher assigns zero probability");
      kl += std::exp(log_s[v]) * (log_s[v] - log_t[v]);
    }
    for (std::size_t v = 0; v < len; ++v) {
      grad[v] = log_s[v] == kNegInf ? 0.0 : inv_temperature * std::exp(log_s[v]) * (log_s[v] - log_t[v] - kl);
    }
  } else {
    for (std::size_t v = 0; v < len; ++v) {
      if (log_t[v] == kNegInf) continue;
      if (log_s[v] == kNegInf) throw DomainError("KL support violation: student assigns zero probability");
      kl += std::exp(log_t[v]) * (log_t[v] - log_s[v]);
    }
    for (std::size_t v = 0; v < len; ++v) {
      const double s = log_s[v] == kNegInf ? 0.0 : std::exp(log_s[v]);
      const double t = log_t[v] == kNegInf ? 0.0 : std::exp(log_t[v]);
      grad[v] = inv_temperature * (s - t);
    }
  }
  return std::max(kl, 0.0);
}

}  // namespace

RnntLossResult rnnt_loss(const Tensor& log_probs, const TokenSequence& target) {
  if (log_probs.rank() != 3) {
    throw DimensionError("rnnt_loss expects [T, U+1, V] log-probs, got " + shape_string(log_probs.shape()));
  }
  const std::size_t T = log_probs.dim(0);
  const std::size_t U = target.size();
  const std::size_t V = log_probs.dim(2);
  if (log_probs.dim(1) != U + 1) {
    throw DimensionError("rnnt_loss lattice has " + std::to_string(log_probs.dim(1)) + " token positions for a " +
                         std::to_string(U) + "-token target");
  }
  validate_tokens(target, V);

  auto blank = [&](std::size_t t, std::size_t u) { return log_probs.at(t, u, kBlank); };
  auto emit = [&](std::size_t t, std::size_t u) {
    return log_probs.at(t, u, static_cast<std::size_t>(target[u]));
  };

  // alpha(t, u): log prob of reaching (t, u) before consuming frame t's blank.
  Tensor alpha({T, U + 1}, kNegInf);
  alpha.at(0, 0) = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = alpha.at(t - 1, u) + blank(t - 1, u);
      if (u > 0) a = log_add(a, alpha.at(t, u - 1) + emit(t, u - 1));
      alpha.at(t, u) = a;
    }
  }
  // beta(t, u): log prob of finishing from (t, u), including the final blank.
  Tensor beta({T, U + 1}, kNegInf);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t u = U + 1; u-- > 0;) {
      if (t == T - 1 && u == U) {
        beta.at(t, u) = blank(t, u);
        continue;
      }
      double b = kNegInf;
      if (t + 1 < T) b = beta.at(t + 1, u) + blank(t, u);
      if (u < U) b = log_add(b, beta.at(t, u + 1) + emit(t, u));
      beta.at(t, u) = b;
    }
  }

  const double log_like = beta.at(0, 0);
  RnntLossResult out;
  out.loss = -log_like;
  out.grad_logprobs = Tensor(log_probs.shape());
  if (!std::isfinite(log_like)) {
    throw DomainError("rnnt_loss: target has zero probability under the lattice");
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const double a = alpha.at(t, u);
      if (a == kNegInf) continue;
      double next_blank = kNegInf;
      if (t + 1 < T) {
        next_blank = beta.at(t + 1, u);
      } else if (u == U) {
        next_blank = 0.0;
      }
      if (next_blank != kNegInf) {
        out.grad_logprobs.at(t, u, kBlank) = -std::exp(a + blank(t, u) + next_blank - log_like);
      }
      if (u < U) {
        const double occupancy = std::exp(a + emit(t, u) + beta.at(t, u + 1) - log_like);
        out.grad_logprobs.at(t, u, static_cast<std::size_t>(target[u])) -= occupancy;
      }
    }
  }
  return out;
}

double rnnt_loss_bruteforce(const ProbLattice& probs, const TokenSequence& target) {
  const std::size_t T = probs.t_len();
  const std::size_t U = target.size();
  if (T > 6 || U > 4) throw RangeError("rnnt_loss_bruteforce is limited to T <= 6, U <= 4");
  if (probs.u_len() != U + 1) throw DimensionError("lattice token positions do not match target length");
  validate_tokens(target, probs.vocab());

  // Each alignment is a sequence of T blanks and U emissions whose last step is
  // the blank leaving (T-1, U). Enumerate every interleaving explicitly.
  double total = 0.0;
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t t, std::size_t u, double path) {
    if (t == T - 1 && u == U) {
      total += path * probs.cell(t, u)[kBlank];
      return;
    }
    if (u < U) walk(t, u + 1, path * probs.cell(t, u)[static_cast<std::size_t>(target[u])]);
    if (t + 1 < T) walk(t + 1, u, path * probs.cell(t, u)[kBlank]);
  };
  walk(0, 0, 1.0);
  if (!(total > 0.0)) throw DomainError("target has zero probability under the lattice");
  return -std::log(total);
}

HiddenMseResult hidden_mse(const HiddenStack& student, const HiddenStack& teacher) {
  check_same_layout(student, teacher);
  HiddenMseResult out;
  auto accumulate = [&out](const std::vector<Tensor>& s, const std::vector<Tensor>& t, std::vector<Tensor>& grads) {
    grads.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double n = static_cast<double>(s[i].size());
      Tensor g(s[i].shape());
      double sq = 0.0;
      for (std::size_t k = 0; k < s[i].size(); ++k) {
        const double diff = s[i][k] - t[i][k];
        sq += diff * diff;
        g[k] = 2.0 * diff / n;
      }
      out.loss += sq / n;
      grads.push_back(std::move(g));
    }
  };
  accumulate(student.encoder, teacher.encoder, out.grad.encoder);
  accumulate(student.decoder, teacher.decoder, out.grad.decoder);
  return out;
}

KlResult output_kl(const ProbLattice& student, const ProbLattice& teacher, double temperature,
                   KlDirection direction) {
  check_same_lattice_shape(student, teacher);
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  const std::size_t cells = student.cells();
  const std::size_t V = student.vocab();
  const double inv_cells = 1.0 / static_cast<double>(cells);

  KlResult out;
  out.grad_logits = Tensor(student.probs().shape());
  std::vector<double> log_s(V), log_t(V);
  for (std::size_t c = 0; c < cells; ++c) {
    tempered_log_probs(student.probs().slice(c), temperature, log_s);
    tempered_log_probs(teacher.probs().slice(c), temperature, log_t);
    auto grad = out.grad_logits.slice(c);
    out.loss += cell_kl(log_s, log_t, direction, 1.0 / temperature, grad);
    for (double& g : grad) g *= inv_cells;
  }
  out.loss *= inv_cells;
  return out;
}

SmoothedKlResult smoothed_output_kl_cached(const ProbLattice& student, const ProbLattice& smoothed_teacher,
                                           const SmoothingConfig& config, KlDirection direction) {
  check_same_lattice_shape(student, smoothed_teacher);
  SmoothedKlResult out;
  out.student_smoothing = adaptive_smooth(student, config);
  const ProbLattice& s_smooth = out.student_smoothing.smoothed;

  const std::size_t cells = student.cells();
  const std::size_t V = student.vocab();
  const double inv_cells = 1.0 / static_cast<double>(cells);
  Tensor grad_smoothed(student.probs().shape());
  std::vector<double> log_s(V), log_t(V), grad_logits(V);
  for (std::size_t c = 0; c < cells; ++c) {
    auto s = s_smooth.probs().slice(c);
    auto t = smoothed_teacher.probs().slice(c);
    for (std::size_t v = 0; v < V; ++v) {
      log_s[v] = s[v] > 0.0 ? std::log(s[v]) : kNegInf;
      log_t[v] = t[v] > 0.0 ? std::log(t[v]) : kNegInf;
    }
    // cell_kl's gradient is w.r.t. log-space logits; convert it to d/dprobs of
    // the smoothed student cell before entering the smoothing VJP.
    out.loss += cell_kl(log_s, log_t, direction, 1.0, grad_logits);
    auto g = grad_smoothed.slice(c);
    for (std::size_t v = 0; v < V; ++v) {
      if (s[v] <= 0.0) {
        g[v] = 0.0;
      } else if (direction == KlDirection::kStudentFirst) {
        g[v] = inv_cells * (log_s[v] - log_t[v] + 1.0);
      } else {
        g[v] = -inv_cells * t[v] / s[v];
      }
    }
  }
  out.loss *= inv_cells;

  const Tensor grad_probs = smooth_gradient(student, grad_smoothed, out.student_smoothing.gammas, config);
  out.grad_logits = Tensor(student.probs().shape());
  for (std::size_t c = 0; c < cells; ++c) {
    softmax_backward(student.probs().slice(c), grad_probs.slice(c), out.grad_logits.slice(c));
  }
  return out;
}

SmoothedKlResult smoothed_output_kl(const ProbLattice& student, const ProbLattice& teacher,
                                    const SmoothingConfig& config, KlDirection direction) {
  check_same_lattice_shape(student, teacher);
  const SmoothingResult teacher_smooth = adaptive_smooth(teacher, config);
  return smoothed_output_kl_cached(student, teacher_smooth.smoothed, config, direction);
}

KdLossBreakdown total_kd_loss(double l_hidden, double l_rnnt, double l_output_kl, double alpha, double beta) {
  if (!(alpha >= 0.0 && beta >= 0.0)) throw DomainError("loss weights must be non-negative");
  KdLossBreakdown out;
  out.l_hidden = l_hidden;
  out.l_rnnt = l_rnnt;
  out.l_output_kl = l_output_kl;
  out.alpha = alpha;
  out.beta = beta;
  out.l_total = alpha * l_hidden + beta * (l_rnnt + l_output_kl);
  return out;
}

}  // namespace atkd
