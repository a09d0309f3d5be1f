// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "atkd/engine.hpp"
#include "atkd/smoothing.hpp"
#include "atkd/synth.hpp"
#include "atkd/transducer.hpp"

namespace atkd {

struct TrainSettings {
  std::size_t steps = 0;
  OptimizerConfig optimizer;
  bool operator==(const TrainSettings&) const = default;
};

struct DistillSettings {
  std::string variant = "two-stage-adaptive";
  double stage1_fraction = 0.25;
  double sub_task_weight = 0.01;
  double temperature = 1.0;
  KlDirection kl_direction = KlDirection::kStudentFirst;
  SmoothingConfig smoothing;
  bool operator==(const DistillSettings&) const = default;
};

struct MatrixSettings {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  // "teacher" evaluates the teacher itself; other names are schedule variants.
  std::vector<std::string> variants = {"teacher",   "no-kd",           "traditional-kd",  "hierarchical-kd",
                                       "two-stage", "two-stage-adaptive", "two-stage-fixed", "stage1-only"};
  bool operator==(const MatrixSettings&) const = default;
};

struct RunConfig {
  SynthTaskConfig task;
  // Student architecture; the teacher shares it with a full-context policy.
  ModelConfig model{.context = ContextPolicy::causal()};
  TrainSettings teacher{.steps = 10000, .optimizer = {.learning_rate = 0.03}};
  TrainSettings student{.steps = 3000, .optimizer = {.learning_rate = 0.03}};
  DistillSettings distill;
  MatrixSettings matrix;

  ModelConfig teacher_model() const;
  ModelConfig student_model() const;
  StageSchedule schedule(const std::string& variant) const;
  StageSchedule schedule() const { return schedule(distill.variant); }
  // Same run with every seed (task, model init, batch order) replaced.
  RunConfig with_seed(std::uint64_t seed) const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const SynthTaskConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const SmoothingConfig& c);
nlohmann::json to_json(const RunConfig& c);

SynthTaskConfig synth_task_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
SmoothingConfig smoothing_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

// Missing keys keep their defaults; unknown keys are rejected with FormatError.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text);
// Canonical form: every key present, two-space indent.
std::string dump_run_config(const RunConfig& c);

std::string to_string(KlDirection d);
std::string to_string(OutputKd k);

// Checkpoint directory: manifest.json with the model config and an ordered
// tensor list [{name, file, shape}], plus one ATKD file per tensor.
void save_checkpoint(const std::string& dir, const ToyTransducer& model);
ToyTransducer load_checkpoint(const std::string& dir);

}  // namespace atkd
