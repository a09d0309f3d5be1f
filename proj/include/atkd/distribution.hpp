// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "atkd/tensor.hpp"

namespace atkd {

/// Vocabulary index reserved for the blank symbol.
inline constexpr int kBlank = 0;

/// Token indices in [1, V-1]; blank never appears.
using TokenSequence = std::vector<int>;

void validate_tokens(const TokenSequence& tokens, std::size_t vocab);

// Max-subtracted softmax over the last axis.
Tensor softmax(const Tensor& logits);
void softmax_inplace(std::span<double> slice);
Tensor log_softmax(const Tensor& logits);

// Backward of softmax for one slice: given probs and dL/dprobs, writes dL/dlogits.
void softmax_backward(std::span<const double> probs, std::span<const double> grad_probs,
                      std::span<double> grad_logits);

// Shannon entropy in nats with 0 log 0 = 0. Throws DomainError on negative entries.
double entropy(std::span<const double> dist);

// KL(p || q) in nats. Throws DimensionError on length mismatch and
// DomainError when q_v = 0 while p_v > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Probability lattice Q over (frame t, token position u, vocabulary v), shape [T, U+1, V].
class ProbLattice {
 public:
  ProbLattice() = default;
  // Validates that every cell is a distribution (entries in [0,1], sum 1 within 1e-9).
  explicit ProbLattice(Tensor probs);
  static ProbLattice from_logits(const Tensor& logits);

  std::size_t t_len() const { return probs_.dim(0); }
  std::size_t u_len() const { return probs_.dim(1); }
  std::size_t vocab() const { return probs_.dim(2); }
  std::size_t cells() const { return probs_.slice_count(); }

  const Tensor& probs() const { return probs_; }
  std::span<const double> cell(std::size_t t, std::size_t u) const {
    return probs_.slice(t * u_len() + u);
  }
  Tensor log_probs() const;

 private:
  Tensor probs_;
};

/// Per-layer hidden activations: encoder layers [T_i, d_i], decoder layers [U_j, d_j].
struct HiddenStack {
  std::vector<Tensor> encoder;
  std::vector<Tensor> decoder;
};

// Throws DimensionError naming the first offending layer.
void check_same_layout(const HiddenStack& a, const HiddenStack& b);

}  // namespace atkd
