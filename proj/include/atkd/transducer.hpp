// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

// Desk-scale transducer: an attention encoder with a context mask, a tanh
// recurrent prediction network and a feed-forward joint network producing a
// [T, U+1, V] lattice. All gradients are written out by hand.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "atkd/distribution.hpp"
#include "atkd/tensor.hpp"

namespace atkd {

enum class ContextKind { kFull, kCausal };

struct ContextPolicy {
  ContextKind kind = ContextKind::kFull;
  std::size_t left_frames = 16;
  std::size_t right_frames = 0;

  static ContextPolicy full() { return {}; }
  static ContextPolicy causal(std::size_t left = 16, std::size_t right = 0) {
    return {ContextKind::kCausal, left, right};
  }
  // Inclusive [first, last] frames visible from frame t of a T-frame input.
  std::pair<std::size_t, std::size_t> window(std::size_t t, std::size_t T) const;
  bool operator==(const ContextPolicy&) const = default;
};

struct ModelConfig {
  std::size_t vocab = 8;
  std::size_t feature_dim = 8;
  std::size_t hidden_dim = 16;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  ContextPolicy context;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { kEncoder, kDecoder, kJoint };

struct EncoderLayerParams {
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor w1, b1;          // [d, d], [d]
  Tensor w2, b2;          // [d, d], [d]
};

struct DecoderLayerParams {
  Tensor wx, wh, b;  // [d, d], [d, d], [d]
};

struct TransducerParams {
  Tensor in_w, in_b;  // [d, F], [d]
  std::vector<EncoderLayerParams> encoder;
  Tensor embedding;  // [V, d]; row 0 (blank) is the start-of-history input
  std::vector<DecoderLayerParams> decoder;
  Tensor joint_enc, joint_dec, joint_b;  // [d, d], [d, d], [d]
  Tensor out_w, out_b;                   // [V, d], [V]
};

// Calls f(name, group, tensor) for every parameter in a fixed order.
template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  f(std::string_view("input.w"), ParamGroup::kEncoder, p.in_w);
  f(std::string_view("input.b"), ParamGroup::kEncoder, p.in_b);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    auto& l = p.encoder[i];
    const std::string prefix = "encoder." + std::to_string(i) + ".";
    f(std::string_view(prefix + "wq"), ParamGroup::kEncoder, l.wq);
    f(std::string_view(prefix + "wk"), ParamGroup::kEncoder, l.wk);
    f(std::string_view(prefix + "wv"), ParamGroup::kEncoder, l.wv);
    f(std::string_view(prefix + "wo"), ParamGroup::kEncoder, l.wo);
    f(std::string_view(prefix + "ff1.w"), ParamGroup::kEncoder, l.w1);
    f(std::string_view(prefix + "ff1.b"), ParamGroup::kEncoder, l.b1);
    f(std::string_view(prefix + "ff2.w"), ParamGroup::kEncoder, l.w2);
    f(std::string_view(prefix + "ff2.b"), ParamGroup::kEncoder, l.b2);
  }
  f(std::string_view("decoder.embedding"), ParamGroup::kDecoder, p.embedding);
  for (std::size_t j = 0; j < p.decoder.size(); ++j) {
    auto& l = p.decoder[j];
    const std::string prefix = "decoder." + std::to_string(j) + ".";
    f(std::string_view(prefix + "wx"), ParamGroup::kDecoder, l.wx);
    f(std::string_view(prefix + "wh"), ParamGroup::kDecoder, l.wh);
    f(std::string_view(prefix + "b"), ParamGroup::kDecoder, l.b);
  }
  f(std::string_view("joint.enc"), ParamGroup::kJoint, p.joint_enc);
  f(std::string_view("joint.dec"), ParamGroup::kJoint, p.joint_dec);
  f(std::string_view("joint.b"), ParamGroup::kJoint, p.joint_b);
  f(std::string_view("joint.out.w"), ParamGroup::kJoint, p.out_w);
  f(std::string_view("joint.out.b"), ParamGroup::kJoint, p.out_b);
}

TransducerParams zeros_like(const TransducerParams& p);
std::size_t param_count(const TransducerParams& p);
// dst += scale * src
void axpy(double scale, const TransducerParams& src, TransducerParams& dst);
double squared_norm(const TransducerParams& p, bool include_enc_dec = true);

struct ToyTransducer {
  ModelConfig config;
  TransducerParams params;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from the seeded generator, zero biases.
  static ToyTransducer init(const ModelConfig& config);
  // Same parameters under a different context policy.
  ToyTransducer with_context(ContextPolicy policy) const;
};

struct EncoderLayerCache {
  Tensor input;  // [T, d]
  Tensor q, k, v;
  Tensor attn;  // [T, T], zero outside the context window
  Tensor ctx;
  Tensor resid;  // input + attention output
  Tensor ffn_act;  // tanh(resid W1^T + b1)
};

struct ForwardTrace {
  Tensor features;
  TokenSequence history;
  HiddenStack hidden;  // E_1..E_N and D_1..D_M
  Tensor input_proj;  // input projection plus fixed sinusoidal frame positions
  std::vector<EncoderLayerCache> encoder_cache;
  Tensor joint_hidden;  // [T, U+1, d]
  Tensor logits;        // [T, U+1, V]
  ProbLattice probs;
};

// Teacher-forced forward pass. The decoder sees the blank-prefixed history,
// so the lattice has history.size() + 1 token positions.
ForwardTrace forward(const ToyTransducer& model, const Tensor& features, const TokenSequence& history);

// Encoder-only forward, returns E_N. Used by greedy decoding.
Tensor encode(const ToyTransducer& model, const Tensor& features);

// Parameter gradients given upstream gradients on the joint logits and on any
// hidden layer. An empty grad_logits or empty layer list means zero.
TransducerParams backward(const ToyTransducer& model, const ForwardTrace& trace, const Tensor& grad_logits,
                          const HiddenStack& grad_hidden);

struct DecodeResult {
  TokenSequence tokens;
  // 1-based frame of the first non-blank emission.
  std::optional<std::size_t> first_emission_frame;
};

inline constexpr int kMaxEmissionsPerFrame = 5;

// Frame-synchronous greedy search: emit argmax tokens until blank wins (at most
// kMaxEmissionsPerFrame per frame), then advance.
DecodeResult greedy_decode(const ToyTransducer& model, const Tensor& features);

}  // namespace atkd
