// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cmath>
#include <vector>

#include "atkd/engine.hpp"

namespace atkd::detail {

struct SampleGradient {
  TransducerParams grad;
  double l_rnnt = 0.0;
  double l_hidden = 0.0;
  double l_kl = 0.0;
};

inline SampleGradient sample_gradient(const ToyTransducer& student, const Utterance& utt,
                                      const TeacherTargets* target, const StepWeights& w) {
  SampleGradient out;
  const ForwardTrace trace = forward(student, utt.features, utt.tokens);
  const std::size_t V = trace.logits.dim(2);

  Tensor grad_logits(trace.logits.shape());
  // Transducer loss on log Q, chained through log-softmax.
  const RnntLossResult rnnt = rnnt_loss(log_softmax(trace.logits), utt.tokens);
  out.l_rnnt = rnnt.loss;
  for (std::size_t c = 0; c < trace.probs.cells(); ++c) {
    auto g_lp = rnnt.grad_logprobs.slice(c);
    auto p = trace.probs.probs().slice(c);
    auto g = grad_logits.slice(c);
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += g_lp[v];
    for (std::size_t v = 0; v < V; ++v) g[v] = w.beta * (g_lp[v] - p[v] * sum);
  }

  if (w.output_kd != OutputKd::kNone) {
    Tensor kl_grad;
    if (w.output_kd == OutputKd::kTemperature) {
      KlResult kl = output_kl(trace.probs, target->probs, w.temperature, w.kl_direction);
      out.l_kl = kl.loss;
      kl_grad = std::move(kl.grad_logits);
    } else {
      SmoothedKlResult kl = smoothed_output_kl_cached(trace.probs, target->smoothed, w.smoothing, w.kl_direction);
      out.l_kl = kl.loss;
      kl_grad = std::move(kl.grad_logits);
    }
    for (std::size_t i = 0; i < grad_logits.size(); ++i) grad_logits[i] += w.beta * kl_grad[i];
  }

  HiddenStack grad_hidden;
  if (w.alpha > 0.0) {
    HiddenMseResult mse = hidden_mse(trace.hidden, target->hidden);
    out.l_hidden = mse.loss;
    grad_hidden = std::move(mse.grad);
    for (auto* layers : {&grad_hidden.encoder, &grad_hidden.decoder}) {
      for (Tensor& t : *layers) {
        for (double& x : t.values()) x *= w.alpha;
      }
    }
  }
  out.grad = backward(student, trace, grad_logits, grad_hidden);
  return out;
}

inline void check_targets(const std::vector<TeacherTargets>* targets, const std::vector<Utterance>& data,
                          const StepWeights& w) {
  const bool needs = w.alpha > 0.0 || w.output_kd != OutputKd::kNone;
  if (needs && (targets == nullptr || targets->size() != data.size())) {
    throw DomainError("distillation step requested without teacher targets for every utterance");
  }
}

// Fixed-order reduction of per-sample results into a batch mean.
inline BatchGradient reduce_samples(const ToyTransducer& student, std::vector<SampleGradient>& samples,
                                    const StepWeights& w) {
  BatchGradient out;
  out.grad = zeros_like(student.params);
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    axpy(inv, s.grad, out.grad);
    out.l_rnnt += inv * s.l_rnnt;
    out.l_hidden += inv * s.l_hidden;
    out.l_kl += inv * s.l_kl;
  }
  out.l_total = total_kd_loss(out.l_hidden, out.l_rnnt, out.l_kl, w.alpha, w.beta).l_total;
  return out;
}

}  // namespace atkd::detail
