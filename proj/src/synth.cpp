// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "atkd/config.hpp"
#include "atkd/tensor_io.hpp"

namespace atkd {
namespace {

constexpr const char* kSplits[] = {"train", "clean", "noisy"};

}  // namespace

void SynthTaskConfig::validate() const {
  if (vocab < 2) throw DomainError("task vocab must be >= 2");
  if (feature_dim < 2) throw DomainError("task feature_dim must be >= 2 (onset flag + template dims)");
  if (min_len == 0 || min_len > max_len) throw DomainError("task needs 1 <= min_len <= max_len");
  if (frames_per_token == 0) throw DomainError("frames_per_token must be positive");
  if (!(noise_train >= 0.0 && noise_clean >= 0.0 && noise_noisy >= 0.0)) {
    throw DomainError("noise levels must be non-negative");
  }
  if (!(bump_width > 0.0)) throw DomainError("bump_width must be positive");
}

std::vector<double> token_template(const SynthTaskConfig& config, int token, std::size_t frame) {
  const std::size_t F = config.feature_dim;
  std::vector<double> x(F, 0.0);
  x[0] = frame == 0 ? 1.0 : 0.0;
  const double centre = 1.0 + static_cast<double>((token - 1) % static_cast<int>(F - 1));
  const double denom = 2.0 * config.bump_width * config.bump_width;
  for (std::size_t f = 1; f < F; ++f) {
    const double dist = static_cast<double>(f) - centre;
    x[f] = std::exp(-dist * dist / denom);
  }
  return x;
}

std::vector<Utterance> synth_split(const SynthTaskConfig& config, std::size_t count, double noise_sigma,
                                   std::uint64_t stream) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> length(config.min_len, config.max_len);
  std::uniform_int_distribution<int> token(1, static_cast<int>(config.vocab) - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<Utterance> out;
  out.reserve(count);
  const std::size_t F = config.feature_dim;
  for (std::size_t n = 0; n < count; ++n) {
    Utterance utt;
    const std::size_t len = length(rng);
    for (std::size_t i = 0; i < len; ++i) utt.tokens.push_back(token(rng));
    utt.features = Tensor({len * config.frames_per_token, F});
    std::size_t row = 0;
    for (int tok : utt.tokens) {
      for (std::size_t j = 0; j < config.frames_per_token; ++j, ++row) {
        const auto tmpl = token_template(config, tok, j);
        for (std::size_t f = 0; f < F; ++f) {
          // Draw even when sigma is 0 so the stream layout is noise-independent.
          const double eps = noise(rng);
          utt.features.at(row, f) = tmpl[f] + noise_sigma * eps;
        }
      }
    }
    out.push_back(std::move(utt));
  }
  return out;
}

Corpus synth_generate(const SynthTaskConfig& config) {
  Corpus c;
  c.train = synth_split(config, config.train_size, config.noise_train, 0);
  c.clean = synth_split(config, config.eval_size, config.noise_clean, 1);
  c.noisy = synth_split(config, config.eval_size, config.noise_noisy, 2);
  return c;
}

void write_corpus(const std::string& dir, const SynthTaskConfig& config, const Corpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "task.json");
    if (!out) throw Error("cannot write task.json in " + dir);
    out << to_json(config).dump(2) << "\n";
  }
  const std::vector<Utterance>* splits[] = {&corpus.train, &corpus.clean, &corpus.noisy};
  for (int s = 0; s < 3; ++s) {
    const auto& data = *splits[s];
    std::size_t frames = 0;
    for (const auto& u : data) frames += u.features.dim(0);
    if (frames == 0) throw DomainError(std::string("split ") + kSplits[s] + " is empty");
    Tensor stacked({frames, config.feature_dim});
    std::size_t row = 0;
    std::ofstream txt(fs::path(dir) / (std::string(kSplits[s]) + ".txt"));
    for (const auto& u : data) {
      std::copy(u.features.data().begin(), u.features.data().end(), stacked.data().begin() + row * config.feature_dim);
      row += u.features.dim(0);
      for (std::size_t i = 0; i < u.tokens.size(); ++i) txt << (i ? " " : "") << u.tokens[i];
      txt << "\n";
    }
    save_atkd((fs::path(dir) / (std::string(kSplits[s]) + ".feats.atkd")).string(), stacked);
  }
}

Corpus read_corpus(const std::string& dir, SynthTaskConfig* config_out) {
  namespace fs = std::filesystem;
  std::ifstream task_in(fs::path(dir) / "task.json");
  if (!task_in) throw FormatError("no task.json in " + dir);
  SynthTaskConfig config;
  try {
    config = synth_task_from_json(nlohmann::json::parse(task_in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad task.json: ") + e.what());
  }
  Corpus corpus;
  std::vector<Utterance>* splits[] = {&corpus.train, &corpus.clean, &corpus.noisy};
  for (int s = 0; s < 3; ++s) {
    const Tensor stacked = load_atkd((fs::path(dir) / (std::string(kSplits[s]) + ".feats.atkd")).string());
    if (stacked.rank() != 2 || stacked.dim(1) != config.feature_dim) {
      throw FormatError(std::string("bad feature tensor for split ") + kSplits[s]);
    }
    std::ifstream txt(fs::path(dir) / (std::string(kSplits[s]) + ".txt"));
    if (!txt) throw FormatError(std::string("missing transcripts for split ") + kSplits[s]);
    std::string line;
    std::size_t row = 0;
    while (std::getline(txt, line)) {
      Utterance utt;
      std::istringstream ls(line);
      int tok = 0;
      while (ls >> tok) utt.tokens.push_back(tok);
      validate_tokens(utt.tokens, config.vocab);
      const std::size_t T = utt.tokens.size() * config.frames_per_token;
      if (T == 0 || row + T > stacked.dim(0)) throw FormatError("transcripts do not match feature rows");
      std::vector<double> data(stacked.data().begin() + row * config.feature_dim,
                               stacked.data().begin() + (row + T) * config.feature_dim);
      utt.features = Tensor({T, config.feature_dim}, std::move(data));
      row += T;
      splits[s]->push_back(std::move(utt));
    }
    if (row != stacked.dim(0)) throw FormatError("feature rows left over after the last transcript");
  }
  if (config_out) *config_out = config;
  return corpus;
}

}  // namespace atkd
