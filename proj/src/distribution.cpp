// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace atkd {

void validate_tokens(const TokenSequence& tokens, std::size_t vocab) {
  for (int tok : tokens) {
    if (tok <= kBlank || static_cast<std::size_t>(tok) >= vocab) {
      throw DomainError("token index " + std::to_string(tok) + " outside [1, " +
                        std::to_string(vocab - 1) + "]");
    }
  }
}

void softmax_inplace(std::span<double> slice) {
  if (slice.empty()) throw DimensionError("softmax over an empty axis");
  const double mx = *std::max_element(slice.begin(), slice.end());
  double sum = 0.0;
  for (double& x : slice) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : slice) x /= sum;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() == 0 || logits.slice_len() == 0) throw DimensionError("softmax over an empty axis");
  Tensor out = logits;
  for (std::size_t s = 0; s < out.slice_count(); ++s) softmax_inplace(out.slice(s));
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() == 0 || logits.slice_len() == 0) throw DimensionError("softmax over an empty axis");
  Tensor out = logits;
  for (std::size_t s = 0; s < out.slice_count(); ++s) {
    auto sl = out.slice(s);
    const double mx = *std::max_element(sl.begin(), sl.end());
    double sum = 0.0;
    for (double x : sl) sum += std::exp(x - mx);
    const double lse = mx + std::log(sum);
    for (double& x : sl) x -= lse;
  }
  return out;
}

void softmax_backward(std::span<const double> probs, std::span<const double> grad_probs,
                      std::span<double> grad_logits) {
  double dot = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) dot += probs[v] * grad_probs[v];
  for (std::size_t v = 0; v < probs.size(); ++v) grad_logits[v] = probs[v] * (grad_probs[v] - dot);
}

double entropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw DomainError("entropy of a distribution with a negative entry");
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw DimensionError("kl_divergence length mismatch: " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()));
  }
  double kl = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (p[v] < 0.0 || q[v] < 0.0) throw DomainError("kl_divergence of a negative entry");
    if (p[v] == 0.0) continue;
    if (q[v] == 0.0) throw DomainError("kl_divergence support violation at index " + std::to_string(v));
    kl += p[v] * (std::log(p[v]) - std::log(q[v]));
  }
  // Rounding can leave tiny negatives when p ~= q.
  return std::max(kl, 0.0);
}

ProbLattice::ProbLattice(Tensor probs) : probs_(std::move(probs)) {
  if (probs_.rank() != 3) {
    throw DimensionError("probability lattice must be rank 3 [T, U+1, V], got " + shape_string(probs_.shape()));
  }
  for (std::size_t s = 0; s < probs_.slice_count(); ++s) {
    double sum = 0.0;
    for (double p : probs_.slice(s)) {
      if (!(p >= 0.0 && p <= 1.0)) throw DomainError("lattice entry outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DomainError("lattice cell " + std::to_string(s) + " sums to " + std::to_string(sum));
    }
  }
}

ProbLattice ProbLattice::from_logits(const Tensor& logits) { return ProbLattice(softmax(logits)); }

Tensor ProbLattice::log_probs() const {
  Tensor out = probs_;
  for (double& x : out.values()) x = x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
  return out;
}

void check_same_layout(const HiddenStack& a, const HiddenStack& b) {
  auto check = [](const std::vector<Tensor>& x, const std::vector<Tensor>& y, const char* kind) {
    if (x.size() != y.size()) {
      throw DimensionError(std::string(kind) + " layer count mismatch: " + std::to_string(x.size()) + " vs " +
                           std::to_string(y.size()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].shape() != y[i].shape()) {
        throw DimensionError(std::string(kind) + " layer " + std::to_string(i + 1) + " shape mismatch: " +
                             shape_string(x[i].shape()) + " vs " + shape_string(y[i].shape()));
      }
    }
  };
  check(a.encoder, b.encoder, "encoder");
  check(a.decoder, b.decoder, "decoder");
}

}  // namespace atkd
