// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/engine.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>

#include "atkd/tensor_io.hpp"
#include "engine_kernels.hpp"

namespace atkd {

std::size_t StageSchedule::total_steps() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

void StageSchedule::validate() const {
  if (stages.empty() || stages.size() > 2) throw DomainError("schedule needs one or two stages");
  for (const auto& s : stages) {
    if (!(s.alpha >= 0.0 && s.beta >= 0.0)) throw DomainError("stage weights must be non-negative");
    const double main = std::max(s.alpha, s.beta);
    const double sub = std::min(s.alpha, s.beta);
    const bool hierarchical = s.alpha == 1.0 && s.beta == 1.0;
    if (!hierarchical && (main != 1.0 || sub > 0.1)) {
      throw DomainError("each stage needs a main task with weight 1 and a sub-task with weight <= 0.1");
    }
  }
  if (output_kd == OutputKd::kTemperature && !(temperature > 0.0)) throw DomainError("temperature must be positive");
}

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> names = {"no-kd",     "traditional-kd",     "hierarchical-kd",
                                                 "two-stage", "two-stage-adaptive", "two-stage-fixed",
                                                 "stage1-only"};
  return names;
}

StageSchedule make_schedule(const std::string& variant, std::size_t total_steps, double stage1_fraction,
                            double sub_task_weight) {
  if (!(stage1_fraction > 0.0 && stage1_fraction < 1.0)) throw DomainError("stage1_fraction must be in (0, 1)");
  const auto stage1 = static_cast<std::size_t>(std::llround(stage1_fraction * static_cast<double>(total_steps)));
  const std::size_t stage2 = total_steps - stage1;
  const StageWeights hidden_main{1.0, sub_task_weight, stage1};
  const StageWeights output_main{sub_task_weight, 1.0, stage2};

  StageSchedule s;
  if (variant == "no-kd") {
    s.stages = {{0.0, 1.0, total_steps}};
    s.output_kd = OutputKd::kNone;
  } else if (variant == "traditional-kd") {
    s.stages = {{0.0, 1.0, total_steps}};
    s.output_kd = OutputKd::kTemperature;
  } else if (variant == "hierarchical-kd") {
    s.stages = {{1.0, 1.0, total_steps}};
    s.output_kd = OutputKd::kTemperature;
  } else if (variant == "two-stage") {
    s.stages = {hidden_main, output_main};
    s.output_kd = OutputKd::kTemperature;
  } else if (variant == "two-stage-adaptive") {
    s.stages = {hidden_main, output_main};
    s.output_kd = OutputKd::kAdaptive;
  } else if (variant == "two-stage-fixed") {
    s.stages = {hidden_main, output_main};
    s.output_kd = OutputKd::kAdaptive;
    s.freeze_enc_dec_in_stage2 = true;
  } else if (variant == "stage1-only") {
    s.stages = {hidden_main};
    s.output_kd = OutputKd::kAdaptive;
  } else {
    throw UsageError("unknown schedule variant '" + variant + "'");
  }
  s.validate();
  return s;
}

void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "step,stage,alpha,beta,l_rnnt,l_hidden,l_kl,l_total\n";
  for (const auto& r : report.records) {
    out << r.step << ',' << r.stage << ',' << format_double(r.alpha) << ',' << format_double(r.beta) << ','
        << format_double(r.l_rnnt) << ',' << format_double(r.l_hidden) << ',' << format_double(r.l_kl) << ','
        << format_double(r.l_total) << '\n';
  }
}

std::vector<TeacherTargets> precompute_teacher_targets(const ToyTransducer& teacher,
                                                       const std::vector<Utterance>& data,
                                                       const StageSchedule& schedule) {
  std::vector<TeacherTargets> out(data.size());
  const bool smooth = schedule.output_kd == OutputKd::kAdaptive;
  const auto n = static_cast<std::ptrdiff_t>(data.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      ForwardTrace tr = forward(teacher, data[i].features, data[i].tokens);
      TeacherTargets& t = out[static_cast<std::size_t>(i)];
      if (smooth) t.smoothed = adaptive_smooth(tr.probs, schedule.smoothing).smoothed;
      t.probs = std::move(tr.probs);
      t.hidden = std::move(tr.hidden);
    } catch (...) {
#pragma omp critical(atkd_engine_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

BatchGradient batch_gradient(const ToyTransducer& student, const std::vector<Utterance>& data,
                             const std::vector<TeacherTargets>* targets, const std::vector<std::size_t>& batch,
                             const StepWeights& weights) {
  if (batch.empty()) throw DomainError("empty minibatch");
  detail::check_targets(targets, data, weights);
  std::vector<detail::SampleGradient> samples(batch.size());
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const std::size_t idx = batch[static_cast<std::size_t>(i)];
      samples[static_cast<std::size_t>(i)] =
          detail::sample_gradient(student, data[idx], targets ? &(*targets)[idx] : nullptr, weights);
    } catch (...) {
#pragma omp critical(atkd_engine_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return detail::reduce_samples(student, samples, weights);
}

namespace serial {

BatchGradient batch_gradient(const ToyTransducer& student, const std::vector<Utterance>& data,
                             const std::vector<TeacherTargets>* targets, const std::vector<std::size_t>& batch,
                             const StepWeights& weights) {
  if (batch.empty()) throw DomainError("empty minibatch");
  detail::check_targets(targets, data, weights);
  std::vector<detail::SampleGradient> samples;
  samples.reserve(batch.size());
  for (std::size_t idx : batch) {
    samples.push_back(detail::sample_gradient(student, data[idx], targets ? &(*targets)[idx] : nullptr, weights));
  }
  return detail::reduce_samples(student, samples, weights);
}

}  // namespace serial

void sgd_update(TransducerParams& params, const TransducerParams& grad, const OptimizerConfig& opt,
                bool freeze_enc_dec) {
  const double norm = std::sqrt(squared_norm(grad, !freeze_enc_dec));
  const double scale = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;
  std::vector<const Tensor*> g;
  visit_params(grad, [&g](std::string_view, ParamGroup, const Tensor& t) { g.push_back(&t); });
  std::size_t i = 0;
  visit_params(params, [&](std::string_view, ParamGroup group, Tensor& t) {
    const Tensor& gt = *g[i++];
    if (freeze_enc_dec && group != ParamGroup::kJoint) return;
    for (std::size_t k = 0; k < t.size(); ++k) t[k] -= opt.learning_rate * scale * gt[k];
  });
}

BatchSampler::BatchSampler(std::size_t data_size, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), order_(data_size), rng_(seed) {
  if (data_size == 0 || batch_size == 0) throw DomainError("sampler needs data and a positive batch size");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

namespace {

// Non-finite values surface either as a non-finite loss or as a lattice that
// fails validation; both are reported as divergence at this step.
BatchGradient checked_gradient(const ToyTransducer& model, const std::vector<Utterance>& data,
                               const std::vector<TeacherTargets>* targets, const std::vector<std::size_t>& batch,
                               const StepWeights& weights, std::size_t step) {
  const std::string where = "training diverged at step " + std::to_string(step) + ": ";
  BatchGradient bg;
  try {
    bg = batch_gradient(model, data, targets, batch, weights);
  } catch (const DomainError& e) {
    throw DomainError(where + e.what());
  }
  if (!std::isfinite(bg.l_total)) throw DomainError(where + "non-finite loss");
  return bg;
}

}  // namespace

ToyTransducer train_teacher(const ModelConfig& config, const std::vector<Utterance>& train, std::size_t steps,
                            const OptimizerConfig& opt, std::uint64_t data_seed, TrainReport* report) {
  if (config.context.kind != ContextKind::kFull) throw DomainError("teacher must use the full-context policy");
  ToyTransducer model = ToyTransducer::init(config);
  BatchSampler sampler(train.size(), opt.batch_size, data_seed);
  StepWeights weights;
  weights.output_kd = OutputKd::kNone;
  if (report) report->seed = data_seed;
  for (std::size_t step = 1; step <= steps; ++step) {
    const BatchGradient bg = checked_gradient(model, train, nullptr, sampler.next(), weights, step);
    if (report) {
      report->records.push_back({step, 1, weights.alpha, weights.beta, bg.l_rnnt, bg.l_hidden, bg.l_kl, bg.l_total});
    }
    sgd_update(model.params, bg.grad, opt, false);
  }
  return model;
}

ToyTransducer train_student(const ToyTransducer& teacher, const ModelConfig& config, const StageSchedule& schedule,
                            const std::vector<Utterance>& train, const OptimizerConfig& opt,
                            std::uint64_t data_seed, TrainReport* report, const StageCallback& on_stage_end) {
  schedule.validate();
  ToyTransducer student = ToyTransducer::init(config);
  {
    ModelConfig shape_a = teacher.config;
    ModelConfig shape_b = config;
    shape_a.context = shape_b.context = ContextPolicy::full();
    shape_a.seed = shape_b.seed = 0;
    if (!(shape_a == shape_b)) throw DimensionError("teacher and student configs are not shape-compatible");
  }

  bool needs_targets = schedule.output_kd != OutputKd::kNone;
  for (const auto& s : schedule.stages) needs_targets = needs_targets || s.alpha > 0.0;
  std::vector<TeacherTargets> targets;
  if (needs_targets) targets = precompute_teacher_targets(teacher, train, schedule);

  BatchSampler sampler(train.size(), opt.batch_size, data_seed);
  if (report) report->seed = data_seed;
  std::size_t step = 0;
  for (std::size_t si = 0; si < schedule.stages.size(); ++si) {
    const StageWeights& stage = schedule.stages[si];
    const StepWeights weights{stage.alpha,          stage.beta,          schedule.output_kd,
                              schedule.temperature, schedule.kl_direction, schedule.smoothing};
    const bool freeze = si == 1 && schedule.freeze_enc_dec_in_stage2;
    for (std::size_t k = 0; k < stage.steps; ++k) {
      ++step;
      const BatchGradient bg =
          checked_gradient(student, train, needs_targets ? &targets : nullptr, sampler.next(), weights, step);
      if (report) {
        report->records.push_back({step, static_cast<int>(si + 1), stage.alpha, stage.beta, bg.l_rnnt, bg.l_hidden,
                                   bg.l_kl, bg.l_total});
      }
      sgd_update(student.params, bg.grad, opt, freeze);
    }
    if (on_stage_end) on_stage_end(static_cast<int>(si + 1), student);
  }
  return student;
}

std::size_t edit_distance(const TokenSequence& ref, const TokenSequence& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1);
  std::vector<std::size_t> cur(hyp.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double token_error_rate(const std::vector<TokenSequence>& refs, const std::vector<TokenSequence>& hyps) {
  if (refs.empty()) throw DomainError("empty evaluation set");
  if (refs.size() != hyps.size()) throw DimensionError("reference and hypothesis counts differ");
  std::size_t errors = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    errors += edit_distance(refs[i], hyps[i]);
    total += refs[i].size();
  }
  if (total == 0) throw DomainError("evaluation references contain no tokens");
  return static_cast<double>(errors) / static_cast<double>(total);
}

double relative_reduction(double baseline_ter, double model_ter) {
  if (!(baseline_ter > 0.0)) throw DomainError("relative reduction needs a positive baseline error rate");
  return 100.0 * (baseline_ter - model_ter) / baseline_ter;
}

EvalMetrics evaluate(const ToyTransducer& model, const std::vector<Utterance>& eval_set) {
  if (eval_set.empty()) throw DomainError("empty evaluation set");
  std::vector<TokenSequence> refs(eval_set.size());
  std::vector<DecodeResult> hyps(eval_set.size());
  const auto n = static_cast<std::ptrdiff_t>(eval_set.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    hyps[static_cast<std::size_t>(i)] = greedy_decode(model, eval_set[static_cast<std::size_t>(i)].features);
  }
  EvalMetrics m;
  m.utterances = eval_set.size();
  std::vector<TokenSequence> hyp_tokens;
  double frame_sum = 0.0;
  std::size_t emitted = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    refs[i] = eval_set[i].tokens;
    hyp_tokens.push_back(hyps[i].tokens);
    if (hyps[i].first_emission_frame) {
      frame_sum += static_cast<double>(*hyps[i].first_emission_frame);
      ++emitted;
    } else {
      ++m.silent_utterances;
    }
  }
  m.ter = token_error_rate(refs, hyp_tokens);
  m.mean_first_emission_frame = emitted ? frame_sum / static_cast<double>(emitted) : 0.0;
  return m;
}

}  // namespace atkd
