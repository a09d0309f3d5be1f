// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/transducer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace atkd {
namespace {

// y[n, out] = x[n, in] * w[out, in]^T (+ b)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b = nullptr) {
  const std::size_t n = x.dim(0);
  const std::size_t in = x.dim(1);
  const std::size_t out = w.dim(0);
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = &x[r * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = &w[o * in];
      double acc = b ? (*b)[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      y[r * out + o] = acc;
    }
  }
  return y;
}

// gw += g^T x, gb += colsum(g), gx += g w. Null outputs are skipped.
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& g, Tensor& gw, Tensor* gb, Tensor* gx) {
  const std::size_t n = x.dim(0);
  const std::size_t in = x.dim(1);
  const std::size_t out = w.dim(0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = &x[r * in];
    const double* gr = &g[r * out];
    for (std::size_t o = 0; o < out; ++o) {
      const double go = gr[o];
      if (go == 0.0) continue;
      double* gwo = &gw[o * in];
      for (std::size_t i = 0; i < in; ++i) gwo[i] += go * xr[i];
      if (gb) (*gb)[o] += go;
      if (gx) {
        const double* wo = &w[o * in];
        double* gxr = &(*gx)[r * in];
        for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wo[i];
      }
    }
  }
}

void tanh_inplace(Tensor& t) {
  for (double& x : t.values()) x = std::tanh(x);
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Fixed sinusoidal frame positions added after the input projection.
void add_positions(Tensor& h) {
  const std::size_t T = h.dim(0);
  const std::size_t d = h.dim(1);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * rate;
      h.at(t, i) += i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
}

Tensor encoder_layer_forward(const EncoderLayerParams& p, const ContextPolicy& policy, const Tensor& h,
                             EncoderLayerCache* cache) {
  const std::size_t T = h.dim(0);
  const std::size_t d = h.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor q = linear(h, p.wq);
  Tensor k = linear(h, p.wk);
  Tensor v = linear(h, p.wv);

  Tensor attn({T, T});
  Tensor ctx({T, d});
  std::vector<double> scores(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto [lo, hi] = policy.window(t, T);
    double mx = -INFINITY;
    for (std::size_t s = lo; s <= hi; ++s) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += q.at(t, i) * k.at(s, i);
      scores[s] = dot * scale;
      mx = std::max(mx, scores[s]);
    }
    double sum = 0.0;
    for (std::size_t s = lo; s <= hi; ++s) {
      scores[s] = std::exp(scores[s] - mx);
      sum += scores[s];
    }
    for (std::size_t s = lo; s <= hi; ++s) {
      const double a = scores[s] / sum;
      attn.at(t, s) = a;
      for (std::size_t i = 0; i < d; ++i) ctx.at(t, i) += a * v.at(s, i);
    }
  }
  Tensor resid = add(h, linear(ctx, p.wo));
  Tensor act = linear(resid, p.w1, &p.b1);
  tanh_inplace(act);
  Tensor out = add(resid, linear(act, p.w2, &p.b2));
  if (cache) {
    *cache = EncoderLayerCache{h, std::move(q), std::move(k), std::move(v), std::move(attn),
                               std::move(ctx), std::move(resid), std::move(act)};
  }
  return out;
}

// Returns d loss / d layer input.
Tensor encoder_layer_backward(const EncoderLayerParams& p, const ContextPolicy& policy,
                              const EncoderLayerCache& c, const Tensor& g_out, EncoderLayerParams& g) {
  const std::size_t T = c.input.dim(0);
  const std::size_t d = c.input.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor g_resid = g_out;
  Tensor g_act(c.ffn_act.shape());
  linear_backward(c.ffn_act, p.w2, g_out, g.w2, &g.b2, &g_act);
  for (std::size_t i = 0; i < g_act.size(); ++i) g_act[i] *= 1.0 - c.ffn_act[i] * c.ffn_act[i];
  linear_backward(c.resid, p.w1, g_act, g.w1, &g.b1, &g_resid);

  Tensor g_in = g_resid;
  Tensor g_ctx(c.ctx.shape());
  linear_backward(c.ctx, p.wo, g_resid, g.wo, nullptr, &g_ctx);

  Tensor g_q({T, d});
  Tensor g_k({T, d});
  Tensor g_v({T, d});
  std::vector<double> g_attn(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto [lo, hi] = policy.window(t, T);
    double weighted = 0.0;
    for (std::size_t s = lo; s <= hi; ++s) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        dot += g_ctx.at(t, i) * c.v.at(s, i);
        g_v.at(s, i) += c.attn.at(t, s) * g_ctx.at(t, i);
      }
      g_attn[s] = dot;
      weighted += c.attn.at(t, s) * dot;
    }
    for (std::size_t s = lo; s <= hi; ++s) {
      const double g_score = c.attn.at(t, s) * (g_attn[s] - weighted) * scale;
      for (std::size_t i = 0; i < d; ++i) {
        g_q.at(t, i) += g_score * c.k.at(s, i);
        g_k.at(s, i) += g_score * c.q.at(t, i);
      }
    }
  }
  linear_backward(c.input, p.wq, g_q, g.wq, nullptr, &g_in);
  linear_backward(c.input, p.wk, g_k, g.wk, nullptr, &g_in);
  linear_backward(c.input, p.wv, g_v, g.wv, nullptr, &g_in);
  return g_in;
}

std::size_t history_token(const TokenSequence& history, std::size_t u) {
  return u == 0 ? static_cast<std::size_t>(kBlank) : static_cast<std::size_t>(history[u - 1]);
}

// One recurrent step of a decoder layer: tanh(wx x + wh h + b).
void decoder_cell(const DecoderLayerParams& p, const double* x, const double* h_prev, double* h_out,
                  std::size_t d) {
  for (std::size_t o = 0; o < d; ++o) {
    double acc = p.b[o];
    for (std::size_t i = 0; i < d; ++i) {
      acc += p.wx[o * d + i] * x[i];
      if (h_prev) acc += p.wh[o * d + i] * h_prev[i];
    }
    h_out[o] = std::tanh(acc);
  }
}

Tensor decoder_input(const ToyTransducer& model, const TokenSequence& history) {
  const std::size_t d = model.config.hidden_dim;
  Tensor x({history.size() + 1, d});
  for (std::size_t u = 0; u <= history.size(); ++u) {
    const std::size_t tok = history_token(history, u);
    std::copy_n(&model.params.embedding[tok * d], d, &x[u * d]);
  }
  return x;
}

}  // namespace

std::pair<std::size_t, std::size_t> ContextPolicy::window(std::size_t t, std::size_t T) const {
  if (kind == ContextKind::kFull) return {0, T - 1};
  const std::size_t lo = t >= left_frames ? t - left_frames : 0;
  const std::size_t hi = std::min(T - 1, t + right_frames);
  return {lo, hi};
}

void ModelConfig::validate() const {
  if (vocab < 2) throw DomainError("vocab must include blank and at least one token");
  if (feature_dim == 0 || hidden_dim == 0) throw DomainError("feature and hidden dims must be positive");
  if (encoder_layers == 0 || decoder_layers == 0) throw DomainError("need at least one encoder and decoder layer");
}

TransducerParams zeros_like(const TransducerParams& p) {
  TransducerParams out = p;
  visit_params(out, [](std::string_view, ParamGroup, Tensor& t) { t.fill(0.0); });
  return out;
}

std::size_t param_count(const TransducerParams& p) {
  std::size_t n = 0;
  visit_params(p, [&n](std::string_view, ParamGroup, const Tensor& t) { n += t.size(); });
  return n;
}

void axpy(double scale, const TransducerParams& src, TransducerParams& dst) {
  std::vector<const Tensor*> s;
  visit_params(src, [&s](std::string_view, ParamGroup, const Tensor& t) { s.push_back(&t); });
  std::size_t i = 0;
  visit_params(dst, [&](std::string_view, ParamGroup, Tensor& t) {
    const Tensor& from = *s[i++];
    for (std::size_t k = 0; k < t.size(); ++k) t[k] += scale * from[k];
  });
}

double squared_norm(const TransducerParams& p, bool include_enc_dec) {
  double n = 0.0;
  visit_params(p, [&](std::string_view, ParamGroup group, const Tensor& t) {
    if (!include_enc_dec && group != ParamGroup::kJoint) return;
    for (double x : t.data()) n += x * x;
  });
  return n;
}

ToyTransducer ToyTransducer::init(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.hidden_dim;
  const std::size_t F = config.feature_dim;
  const std::size_t V = config.vocab;
  TransducerParams p;
  p.in_w = Tensor({d, F});
  p.in_b = Tensor({d});
  p.encoder.resize(config.encoder_layers);
  for (auto& l : p.encoder) {
    l.wq = l.wk = l.wv = l.wo = l.w1 = l.w2 = Tensor({d, d});
    l.b1 = l.b2 = Tensor({d});
  }
  p.embedding = Tensor({V, d});
  p.decoder.resize(config.decoder_layers);
  for (auto& l : p.decoder) {
    l.wx = l.wh = Tensor({d, d});
    l.b = Tensor({d});
  }
  p.joint_enc = p.joint_dec = Tensor({d, d});
  p.joint_b = Tensor({d});
  p.out_w = Tensor({V, d});
  p.out_b = Tensor({V});

  std::mt19937_64 rng(config.seed);
  visit_params(p, [&rng](std::string_view, ParamGroup, Tensor& t) {
    if (t.rank() == 1) return;  // biases start at zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.dim(1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : t.values()) x = dist(rng);
  });
  // Embedding rows are one-hot lookups (fan_in 1); rescale the [V, d] draw to U(-1, 1).
  const double emb_scale = std::sqrt(static_cast<double>(d));
  for (double& x : p.embedding.values()) x *= emb_scale;
  return ToyTransducer{config, std::move(p)};
}

ToyTransducer ToyTransducer::with_context(ContextPolicy policy) const {
  ToyTransducer out = *this;
  out.config.context = policy;
  return out;
}

Tensor encode(const ToyTransducer& model, const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != model.config.feature_dim) {
    throw DimensionError("features must be [T, " + std::to_string(model.config.feature_dim) + "], got " +
                         shape_string(features.shape()));
  }
  Tensor h = linear(features, model.params.in_w, &model.params.in_b);
  add_positions(h);
  for (const auto& layer : model.params.encoder) h = encoder_layer_forward(layer, model.config.context, h, nullptr);
  return h;
}

ForwardTrace forward(const ToyTransducer& model, const Tensor& features, const TokenSequence& history) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  if (features.rank() != 2 || features.dim(1) != cfg.feature_dim) {
    throw DimensionError("features must be [T, " + std::to_string(cfg.feature_dim) + "], got " +
                         shape_string(features.shape()));
  }
  validate_tokens(history, cfg.vocab);
  const std::size_t T = features.dim(0);
  const std::size_t U1 = history.size() + 1;
  const std::size_t d = cfg.hidden_dim;
  const std::size_t V = cfg.vocab;

  ForwardTrace tr;
  tr.features = features;
  tr.history = history;
  tr.input_proj = linear(features, p.in_w, &p.in_b);
  add_positions(tr.input_proj);
  tr.encoder_cache.resize(p.encoder.size());
  const Tensor* h = &tr.input_proj;
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    tr.hidden.encoder.push_back(encoder_layer_forward(p.encoder[i], cfg.context, *h, &tr.encoder_cache[i]));
    h = &tr.hidden.encoder.back();
  }

  Tensor x = decoder_input(model, history);
  for (const auto& layer : p.decoder) {
    Tensor out({U1, d});
    for (std::size_t u = 0; u < U1; ++u) {
      decoder_cell(layer, &x[u * d], u ? &out[(u - 1) * d] : nullptr, &out[u * d], d);
    }
    tr.hidden.decoder.push_back(out);
    x = std::move(out);
  }

  const Tensor enc_proj = linear(tr.hidden.encoder.back(), p.joint_enc);
  const Tensor dec_proj = linear(tr.hidden.decoder.back(), p.joint_dec, &p.joint_b);
  tr.joint_hidden = Tensor({T, U1, d});
  tr.logits = Tensor({T, U1, V});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u < U1; ++u) {
      double* z = &tr.joint_hidden.at(t, u, 0);
      for (std::size_t i = 0; i < d; ++i) z[i] = std::tanh(enc_proj.at(t, i) + dec_proj.at(u, i));
      double* lg = &tr.logits.at(t, u, 0);
      for (std::size_t v = 0; v < V; ++v) {
        double acc = p.out_b[v];
        for (std::size_t i = 0; i < d; ++i) acc += p.out_w[v * d + i] * z[i];
        lg[v] = acc;
      }
    }
  }
  tr.probs = ProbLattice::from_logits(tr.logits);
  return tr;
}

TransducerParams backward(const ToyTransducer& model, const ForwardTrace& trace, const Tensor& grad_logits,
                          const HiddenStack& grad_hidden) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const std::size_t T = trace.features.dim(0);
  const std::size_t U1 = trace.history.size() + 1;
  const std::size_t d = cfg.hidden_dim;
  const std::size_t V = cfg.vocab;
  if (!grad_logits.empty() && grad_logits.shape() != trace.logits.shape()) {
    throw DimensionError("grad_logits shape " + shape_string(grad_logits.shape()) + " does not match logits " +
                         shape_string(trace.logits.shape()));
  }
  if (!grad_hidden.encoder.empty() || !grad_hidden.decoder.empty()) {
    HiddenStack padded = grad_hidden;
    if (padded.encoder.empty()) padded.encoder = trace.hidden.encoder;
    if (padded.decoder.empty()) padded.decoder = trace.hidden.decoder;
    check_same_layout(padded, trace.hidden);
  }

  TransducerParams g = zeros_like(p);
  std::vector<Tensor> g_enc;
  std::vector<Tensor> g_dec;
  for (std::size_t i = 0; i < trace.hidden.encoder.size(); ++i) {
    g_enc.push_back(grad_hidden.encoder.empty() ? Tensor(trace.hidden.encoder[i].shape())
                                                : grad_hidden.encoder[i]);
  }
  for (std::size_t j = 0; j < trace.hidden.decoder.size(); ++j) {
    g_dec.push_back(grad_hidden.decoder.empty() ? Tensor(trace.hidden.decoder[j].shape())
                                                : grad_hidden.decoder[j]);
  }

  // Joint network.
  if (!grad_logits.empty()) {
    Tensor g_enc_proj({T, d});
    Tensor g_dec_proj({U1, d});
    std::vector<double> g_z(d);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t u = 0; u < U1; ++u) {
        const double* gl = &grad_logits.at(t, u, 0);
        const double* z = &trace.joint_hidden.at(t, u, 0);
        std::fill(g_z.begin(), g_z.end(), 0.0);
        for (std::size_t v = 0; v < V; ++v) {
          const double gv = gl[v];
          if (gv == 0.0) continue;
          g.out_b[v] += gv;
          for (std::size_t i = 0; i < d; ++i) {
            g.out_w[v * d + i] += gv * z[i];
            g_z[i] += gv * p.out_w[v * d + i];
          }
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double g_pre = g_z[i] * (1.0 - z[i] * z[i]);
          g_enc_proj.at(t, i) += g_pre;
          g_dec_proj.at(u, i) += g_pre;
        }
      }
    }
    linear_backward(trace.hidden.encoder.back(), p.joint_enc, g_enc_proj, g.joint_enc, nullptr, &g_enc.back());
    linear_backward(trace.hidden.decoder.back(), p.joint_dec, g_dec_proj, g.joint_dec, &g.joint_b, &g_dec.back());
  }

  // Encoder, top layer down; each layer's input gradient feeds the layer below.
  for (std::size_t i = p.encoder.size(); i-- > 0;) {
    Tensor g_in = encoder_layer_backward(p.encoder[i], cfg.context, trace.encoder_cache[i], g_enc[i], g.encoder[i]);
    if (i > 0) {
      add_into(g_enc[i - 1], g_in);
    } else {
      linear_backward(trace.features, p.in_w, g_in, g.in_w, &g.in_b, nullptr);
    }
  }

  // Decoder, backprop through time per layer.
  const Tensor x0 = decoder_input(model, trace.history);
  for (std::size_t j = p.decoder.size(); j-- > 0;) {
    const auto& layer = p.decoder[j];
    auto& gl = g.decoder[j];
    const Tensor& out = trace.hidden.decoder[j];
    const Tensor& in = j == 0 ? x0 : trace.hidden.decoder[j - 1];
    Tensor g_in({U1, d});
    std::vector<double> g_carry(d, 0.0);
    std::vector<double> g_pre(d);
    for (std::size_t u = U1; u-- > 0;) {
      for (std::size_t o = 0; o < d; ++o) {
        const double h = out.at(u, o);
        g_pre[o] = (g_dec[j].at(u, o) + g_carry[o]) * (1.0 - h * h);
      }
      std::fill(g_carry.begin(), g_carry.end(), 0.0);
      for (std::size_t o = 0; o < d; ++o) {
        const double go = g_pre[o];
        gl.b[o] += go;
        for (std::size_t i = 0; i < d; ++i) {
          gl.wx[o * d + i] += go * in.at(u, i);
          g_in.at(u, i) += go * layer.wx[o * d + i];
          if (u > 0) {
            gl.wh[o * d + i] += go * out.at(u - 1, i);
            g_carry[i] += go * layer.wh[o * d + i];
          }
        }
      }
    }
    if (j > 0) {
      add_into(g_dec[j - 1], g_in);
    } else {
      for (std::size_t u = 0; u < U1; ++u) {
        const std::size_t tok = history_token(trace.history, u);
        for (std::size_t i = 0; i < d; ++i) g.embedding[tok * d + i] += g_in.at(u, i);
      }
    }
  }
  return g;
}

DecodeResult greedy_decode(const ToyTransducer& model, const Tensor& features) {
  const auto& p = model.params;
  const std::size_t d = model.config.hidden_dim;
  const std::size_t V = model.config.vocab;
  const Tensor enc = encode(model, features);
  const Tensor enc_proj = linear(enc, p.joint_enc);
  const std::size_t T = enc.dim(0);

  std::vector<std::vector<double>> state(p.decoder.size(), std::vector<double>(d));
  std::vector<double> dec_proj(d);
  bool has_state = false;
  auto advance_decoder = [&](std::size_t token) {
    std::vector<double> x(&p.embedding[token * d], &p.embedding[token * d] + d);
    for (std::size_t j = 0; j < p.decoder.size(); ++j) {
      std::vector<double> next(d);
      decoder_cell(p.decoder[j], x.data(), has_state ? state[j].data() : nullptr, next.data(), d);
      state[j] = next;
      x = std::move(next);
    }
    has_state = true;
    for (std::size_t o = 0; o < d; ++o) {
      double acc = p.joint_b[o];
      for (std::size_t i = 0; i < d; ++i) acc += p.joint_dec[o * d + i] * x[i];
      dec_proj[o] = acc;
    }
  };
  advance_decoder(kBlank);

  DecodeResult result;
  std::vector<double> z(d);
  for (std::size_t t = 0; t < T; ++t) {
    for (int emitted = 0; emitted < kMaxEmissionsPerFrame; ++emitted) {
      for (std::size_t i = 0; i < d; ++i) z[i] = std::tanh(enc_proj.at(t, i) + dec_proj[i]);
      std::size_t best = 0;
      double best_logit = -INFINITY;
      for (std::size_t v = 0; v < V; ++v) {
        double acc = p.out_b[v];
        for (std::size_t i = 0; i < d; ++i) acc += p.out_w[v * d + i] * z[i];
        if (acc > best_logit) {
          best_logit = acc;
          best = v;
        }
      }
      if (best == static_cast<std::size_t>(kBlank)) break;
      result.tokens.push_back(static_cast<int>(best));
      if (!result.first_emission_frame) result.first_emission_frame = t + 1;
      advance_decoder(best);
    }
  }
  return result;
}

}  // namespace atkd
