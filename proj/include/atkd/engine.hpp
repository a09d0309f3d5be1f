// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

// Two-stage distillation: teacher training, student training under a stage
// schedule of (alpha, beta) loss weights, evaluation and the variant matrix.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "atkd/losses.hpp"
#include "atkd/smoothing.hpp"
#include "atkd/synth.hpp"
#include "atkd/transducer.hpp"

namespace atkd {

enum class OutputKd {
  kNone,         // no KL term
  kTemperature,  // KL of temperature-scaled distributions
  kAdaptive,     // KL of adaptively smoothed distributions
};

struct StageWeights {
  double alpha = 1.0;  // hidden-layer MSE weight
  double beta = 0.01;  // output weight (transducer loss + KL)
  std::size_t steps = 0;
  bool operator==(const StageWeights&) const = default;
};

struct StageSchedule {
  std::vector<StageWeights> stages;
  bool freeze_enc_dec_in_stage2 = false;
  OutputKd output_kd = OutputKd::kAdaptive;
  double temperature = 1.0;
  KlDirection kl_direction = KlDirection::kStudentFirst;
  SmoothingConfig smoothing;

  std::size_t total_steps() const;
  // Each stage has a main task (weight 1) and a sub-task (weight <= 0.1),
  // except the alpha = beta = 1 hierarchical configuration.
  void validate() const;
  bool operator==(const StageSchedule&) const = default;
};

// Named schedules. `stage1_fraction` splits `total_steps` between the stages.
// Known names: no-kd, traditional-kd, hierarchical-kd, two-stage,
// two-stage-adaptive, two-stage-fixed, stage1-only.
StageSchedule make_schedule(const std::string& variant, std::size_t total_steps, double stage1_fraction = 0.5,
                            double sub_task_weight = 0.01);
const std::vector<std::string>& known_variants();

struct OptimizerConfig {
  double learning_rate = 0.1;
  double clip_norm = 5.0;
  std::size_t batch_size = 16;
  bool operator==(const OptimizerConfig&) const = default;
};

struct TrainRecord {
  std::size_t step = 0;  // 1-based
  int stage = 1;
  double alpha = 0.0;
  double beta = 0.0;
  double l_rnnt = 0.0;
  double l_hidden = 0.0;
  double l_kl = 0.0;
  double l_total = 0.0;
};

struct EvalMetrics {
  double ter = 0.0;
  double mean_first_emission_frame = 0.0;
  std::size_t utterances = 0;
  std::size_t silent_utterances = 0;  // no emission at all
};

struct TrainReport {
  std::vector<TrainRecord> records;
  std::optional<EvalMetrics> clean;
  std::optional<EvalMetrics> noisy;
  std::uint64_t seed = 0;
  std::string config_json;
};

// CSV column order: step,stage,alpha,beta,l_rnnt,l_hidden,l_kl,l_total
void write_report_csv(std::ostream& out, const TrainReport& report);

// Teacher-side constants for one training utterance.
struct TeacherTargets {
  ProbLattice probs;
  ProbLattice smoothed;  // only filled for adaptive KD
  HiddenStack hidden;
};

std::vector<TeacherTargets> precompute_teacher_targets(const ToyTransducer& teacher,
                                                       const std::vector<Utterance>& data,
                                                       const StageSchedule& schedule);

struct StepWeights {
  double alpha = 0.0;
  double beta = 1.0;
  OutputKd output_kd = OutputKd::kNone;
  double temperature = 1.0;
  KlDirection kl_direction = KlDirection::kStudentFirst;
  SmoothingConfig smoothing;
};

struct BatchGradient {
  TransducerParams grad;  // mean over the batch
  double l_rnnt = 0.0;
  double l_hidden = 0.0;
  double l_kl = 0.0;
  double l_total = 0.0;
};

// Per-utterance gradients of alpha * L_hidden + beta * (L_rnnt + L_kl),
// averaged over `batch` in index order. Utterances run on OpenMP threads; the
// reduction order is fixed, so the result does not depend on the thread count.
// `targets` may be null when alpha = 0 and no KL term is requested.
BatchGradient batch_gradient(const ToyTransducer& student, const std::vector<Utterance>& data,
                             const std::vector<TeacherTargets>* targets, const std::vector<std::size_t>& batch,
                             const StepWeights& weights);

namespace serial {
BatchGradient batch_gradient(const ToyTransducer& student, const std::vector<Utterance>& data,
                             const std::vector<TeacherTargets>* targets, const std::vector<std::size_t>& batch,
                             const StepWeights& weights);
}  // namespace serial

// Plain gradient descent with global-norm clipping. With freeze_enc_dec only
// joint parameters move and the clip norm is taken over them alone.
void sgd_update(TransducerParams& params, const TransducerParams& grad, const OptimizerConfig& opt,
                bool freeze_enc_dec);

// Deterministic minibatch order: reshuffled epochs from a seeded generator.
class BatchSampler {
 public:
  BatchSampler(std::size_t data_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

// Full-context model trained on the transducer loss alone.
ToyTransducer train_teacher(const ModelConfig& config, const std::vector<Utterance>& train, std::size_t steps,
                            const OptimizerConfig& opt, std::uint64_t data_seed, TrainReport* report = nullptr);

// Called at the end of each stage with the 1-based stage index.
using StageCallback = std::function<void(int stage, const ToyTransducer& student)>;

// Student training under `schedule`. The teacher is only read.
ToyTransducer train_student(const ToyTransducer& teacher, const ModelConfig& config, const StageSchedule& schedule,
                            const std::vector<Utterance>& train, const OptimizerConfig& opt,
                            std::uint64_t data_seed, TrainReport* report = nullptr,
                            const StageCallback& on_stage_end = nullptr);

std::size_t edit_distance(const TokenSequence& ref, const TokenSequence& hyp);
// Summed edit distance over total reference tokens.
double token_error_rate(const std::vector<TokenSequence>& refs, const std::vector<TokenSequence>& hyps);
// 100 * (baseline - model) / baseline.
double relative_reduction(double baseline_ter, double model_ter);

EvalMetrics evaluate(const ToyTransducer& model, const std::vector<Utterance>& eval_set);

}  // namespace atkd
