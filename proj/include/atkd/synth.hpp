// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "atkd/distribution.hpp"
#include "atkd/tensor.hpp"

namespace atkd {

// Synthetic transduction task. Each token k in [1, V-1] owns a template frame:
// a Gaussian bump over feature dims 1..F-1 centred on dim 1 + (k-1) mod (F-1),
// plus an onset flag in dim 0 on the first frame of every token. Utterances are
// frames_per_token template frames per token with additive Gaussian noise.
struct SynthTaskConfig {
  std::size_t vocab = 8;
  std::size_t min_len = 2;
  std::size_t max_len = 8;
  std::size_t frames_per_token = 2;
  std::size_t feature_dim = 8;
  double bump_width = 0.6;
  double noise_train = 0.45;
  double noise_clean = 0.1;
  double noise_noisy = 0.5;
  std::size_t train_size = 2000;
  std::size_t eval_size = 200;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const SynthTaskConfig&) const = default;
};

struct Utterance {
  Tensor features;  // [frames_per_token * U, F]
  TokenSequence tokens;
};

struct Corpus {
  std::vector<Utterance> train;
  std::vector<Utterance> clean;
  std::vector<Utterance> noisy;
};

// Noise-free frame `frame` (0-based within the token) of `token`.
std::vector<double> token_template(const SynthTaskConfig& config, int token, std::size_t frame);

std::vector<Utterance> synth_split(const SynthTaskConfig& config, std::size_t count, double noise_sigma,
                                   std::uint64_t stream);
Corpus synth_generate(const SynthTaskConfig& config);

// Corpus directory layout:
//   task.json                generating SynthTaskConfig
//   <split>.feats.atkd       all frames of the split stacked, [sum T_i, F]
//   <split>.txt              one transcript per line, space-separated indices
// with split in {train, clean, noisy}. Utterance i spans
// frames_per_token * len(transcript i) rows of the feature tensor.
void write_corpus(const std::string& dir, const SynthTaskConfig& config, const Corpus& corpus);
Corpus read_corpus(const std::string& dir, SynthTaskConfig* config = nullptr);

}  // namespace atkd
