// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "atkd/tensor_io.hpp"

namespace atkd {

using nlohmann::json;

namespace {

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw FormatError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw FormatError(std::string("unknown key '") + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad value for '") + key + "': " + e.what());
  }
}

KlDirection kl_direction_from(const std::string& s) {
  if (s == "student-first") return KlDirection::kStudentFirst;
  if (s == "teacher-first") return KlDirection::kTeacherFirst;
  throw FormatError("kl_direction must be student-first or teacher-first, got " + s);
}

json optimizer_json(const TrainSettings& t) {
  return json{{"steps", t.steps},
              {"learning_rate", t.optimizer.learning_rate},
              {"clip_norm", t.optimizer.clip_norm},
              {"batch_size", t.optimizer.batch_size}};
}

TrainSettings train_settings_from(const json& j, const char* where) {
  check_keys(j, where, {"steps", "learning_rate", "clip_norm", "batch_size"});
  TrainSettings t;
  read(j, "steps", t.steps);
  read(j, "learning_rate", t.optimizer.learning_rate);
  read(j, "clip_norm", t.optimizer.clip_norm);
  read(j, "batch_size", t.optimizer.batch_size);
  return t;
}

}  // namespace

std::string to_string(KlDirection d) {
  return d == KlDirection::kStudentFirst ? "student-first" : "teacher-first";
}

std::string to_string(OutputKd k) {
  switch (k) {
    case OutputKd::kNone:
      return "none";
    case OutputKd::kTemperature:
      return "temperature";
    case OutputKd::kAdaptive:
      return "adaptive";
  }
  return "none";
}

json to_json(const SynthTaskConfig& c) {
  return json{{"vocab", c.vocab},
              {"min_len", c.min_len},
              {"max_len", c.max_len},
              {"frames_per_token", c.frames_per_token},
              {"feature_dim", c.feature_dim},
              {"bump_width", c.bump_width},
              {"noise_train", c.noise_train},
              {"noise_clean", c.noise_clean},
              {"noise_noisy", c.noise_noisy},
              {"train_size", c.train_size},
              {"eval_size", c.eval_size},
              {"seed", c.seed}};
}

SynthTaskConfig synth_task_from_json(const json& j) {
  check_keys(j, "task", {"vocab", "min_len", "max_len", "frames_per_token", "feature_dim", "bump_width",
                         "noise_train", "noise_clean", "noise_noisy", "train_size", "eval_size", "seed"});
  SynthTaskConfig c;
  read(j, "vocab", c.vocab);
  read(j, "min_len", c.min_len);
  read(j, "max_len", c.max_len);
  read(j, "frames_per_token", c.frames_per_token);
  read(j, "feature_dim", c.feature_dim);
  read(j, "bump_width", c.bump_width);
  read(j, "noise_train", c.noise_train);
  read(j, "noise_clean", c.noise_clean);
  read(j, "noise_noisy", c.noise_noisy);
  read(j, "train_size", c.train_size);
  read(j, "eval_size", c.eval_size);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

json to_json(const ModelConfig& c) {
  return json{{"vocab", c.vocab},
              {"feature_dim", c.feature_dim},
              {"hidden_dim", c.hidden_dim},
              {"encoder_layers", c.encoder_layers},
              {"decoder_layers", c.decoder_layers},
              {"context", c.context.kind == ContextKind::kFull ? "full" : "causal"},
              {"left_frames", c.context.left_frames},
              {"right_frames", c.context.right_frames},
              {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j, "model", {"vocab", "feature_dim", "hidden_dim", "encoder_layers", "decoder_layers", "context",
                          "left_frames", "right_frames", "seed"});
  ModelConfig c{.context = ContextPolicy::causal()};
  read(j, "vocab", c.vocab);
  read(j, "feature_dim", c.feature_dim);
  read(j, "hidden_dim", c.hidden_dim);
  read(j, "encoder_layers", c.encoder_layers);
  read(j, "decoder_layers", c.decoder_layers);
  std::string context = "causal";
  read(j, "context", context);
  if (context == "full") {
    c.context.kind = ContextKind::kFull;
  } else if (context != "causal") {
    throw FormatError("model.context must be full or causal, got " + context);
  }
  read(j, "left_frames", c.context.left_frames);
  read(j, "right_frames", c.context.right_frames);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

json to_json(const SmoothingConfig& c) {
  json target = c.target_entropy ? json(*c.target_entropy) : json("max");
  return json{{"target_entropy", target},     {"steps", c.max_steps},
              {"gamma_min", c.gamma_min},     {"gamma_max", c.gamma_max},
              {"degenerate_eps", c.degenerate_eps}, {"prob_floor", c.prob_floor}};
}

SmoothingConfig smoothing_from_json(const json& j) {
  check_keys(j, "smoothing", {"target_entropy", "steps", "gamma_min", "gamma_max", "degenerate_eps", "prob_floor"});
  SmoothingConfig c;
  if (j.contains("target_entropy")) {
    const auto& t = j.at("target_entropy");
    if (t.is_string()) {
      if (t.get<std::string>() != "max") throw FormatError("target_entropy must be a number or \"max\"");
    } else if (t.is_number()) {
      c.target_entropy = t.get<double>();
    } else {
      throw FormatError("target_entropy must be a number or \"max\"");
    }
  }
  read(j, "steps", c.max_steps);
  read(j, "gamma_min", c.gamma_min);
  read(j, "gamma_max", c.gamma_max);
  read(j, "degenerate_eps", c.degenerate_eps);
  read(j, "prob_floor", c.prob_floor);
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"task", to_json(c.task)},
              {"model", to_json(c.model)},
              {"teacher", optimizer_json(c.teacher)},
              {"student", optimizer_json(c.student)},
              {"distill",
               {{"variant", c.distill.variant},
                {"stage1_fraction", c.distill.stage1_fraction},
                {"sub_task_weight", c.distill.sub_task_weight},
                {"temperature", c.distill.temperature},
                {"kl_direction", to_string(c.distill.kl_direction)},
                {"smoothing", to_json(c.distill.smoothing)}}},
              {"matrix", {{"seeds", c.matrix.seeds}, {"variants", c.matrix.variants}}}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "config", {"task", "model", "teacher", "student", "distill", "matrix"});
  RunConfig c;
  if (j.contains("task")) c.task = synth_task_from_json(j.at("task"));
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("teacher")) c.teacher = train_settings_from(j.at("teacher"), "teacher");
  if (j.contains("student")) c.student = train_settings_from(j.at("student"), "student");
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    check_keys(d, "distill",
               {"variant", "stage1_fraction", "sub_task_weight", "temperature", "kl_direction", "smoothing"});
    read(d, "variant", c.distill.variant);
    read(d, "stage1_fraction", c.distill.stage1_fraction);
    read(d, "sub_task_weight", c.distill.sub_task_weight);
    read(d, "temperature", c.distill.temperature);
    if (d.contains("kl_direction")) c.distill.kl_direction = kl_direction_from(d.at("kl_direction").get<std::string>());
    if (d.contains("smoothing")) c.distill.smoothing = smoothing_from_json(d.at("smoothing"));
  }
  if (j.contains("matrix")) {
    const auto& m = j.at("matrix");
    check_keys(m, "matrix", {"seeds", "variants"});
    read(m, "seeds", c.matrix.seeds);
    read(m, "variants", c.matrix.variants);
  }
  if (c.model.vocab != c.task.vocab || c.model.feature_dim != c.task.feature_dim) {
    throw FormatError("model vocab/feature_dim must match the task");
  }
  return c;
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

ModelConfig RunConfig::teacher_model() const {
  ModelConfig m = model;
  m.context = ContextPolicy::full();
  return m;
}

ModelConfig RunConfig::student_model() const {
  ModelConfig m = model;
  if (m.context.kind == ContextKind::kFull) m.context = ContextPolicy::causal();
  return m;
}

StageSchedule RunConfig::schedule(const std::string& variant) const {
  StageSchedule s = make_schedule(variant, student.steps, distill.stage1_fraction, distill.sub_task_weight);
  if (s.output_kd == OutputKd::kTemperature) s.temperature = distill.temperature;
  s.kl_direction = distill.kl_direction;
  s.smoothing = distill.smoothing;
  return s;
}

RunConfig RunConfig::with_seed(std::uint64_t seed) const {
  RunConfig c = *this;
  c.task.seed = seed;
  c.model.seed = seed;
  return c;
}

void save_checkpoint(const std::string& dir, const ToyTransducer& model) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  visit_params(model.params, [&](std::string_view name, ParamGroup, const Tensor& t) {
    const std::string file = std::string(name) + ".atkd";
    save_atkd((std::filesystem::path(dir) / file).string(), t);
    tensors.push_back(json{{"name", name}, {"file", file}, {"shape", t.shape()}});
  });
  json manifest{{"format", "atkd-checkpoint"}, {"version", 1}, {"config", to_json(model.config)},
                {"tensors", tensors}};
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

ToyTransducer load_checkpoint(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  if (!in) throw FormatError("no manifest.json in " + dir);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "atkd-checkpoint") throw FormatError("not an atkd checkpoint: " + dir);
  ToyTransducer model = ToyTransducer::init(model_config_from_json(manifest.at("config")));
  const auto& tensors = manifest.at("tensors");
  std::size_t i = 0;
  visit_params(model.params, [&](std::string_view name, ParamGroup, Tensor& t) {
    if (i >= tensors.size()) throw FormatError("checkpoint is missing tensor " + std::string(name));
    const auto& entry = tensors.at(i++);
    if (entry.at("name").get<std::string>() != name) {
      throw FormatError("checkpoint tensor order mismatch at " + std::string(name));
    }
    Tensor loaded = load_atkd((std::filesystem::path(dir) / entry.at("file").get<std::string>()).string());
    if (loaded.shape() != t.shape()) {
      throw FormatError("checkpoint tensor " + std::string(name) + " has shape " + shape_string(loaded.shape()) +
                        ", expected " + shape_string(t.shape()));
    }
    t = std::move(loaded);
  });
  if (i != tensors.size()) throw FormatError("checkpoint has extra tensors");
  return model;
}

}  // namespace atkd
