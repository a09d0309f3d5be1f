// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "atkd/config.hpp"
#include "atkd/synth.hpp"
#include "test_util.hpp"

using namespace atkd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("atkd_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("run config JSON round trip") {
  RunConfig c;
  c.task.noise_noisy = 0.7;
  c.model.hidden_dim = 12;
  c.model.context = ContextPolicy::causal(3, 1);
  c.distill.variant = "two-stage";
  c.distill.kl_direction = KlDirection::kTeacherFirst;
  c.distill.smoothing.max_steps = 3;
  c.distill.smoothing.target_entropy = 0.9;
  c.matrix.seeds = {4, 5};
  const std::string text = dump_run_config(c);
  CHECK(parse_run_config(text) == c);
  CHECK(dump_run_config(parse_run_config(text)) == text);
}

TEST_CASE("partial config keeps defaults, unknown keys are rejected") {
  const RunConfig c = parse_run_config(R"({"teacher": {"steps": 5}})");
  CHECK(c.teacher.steps == 5);
  CHECK(c.student == RunConfig{}.student);
  CHECK_THROWS_AS(parse_run_config(R"({"teachr": {}})"), FormatError);
  CHECK_THROWS_AS(parse_run_config(R"({"task": {"vocabb": 3}})"), FormatError);
  CHECK_THROWS_AS(parse_run_config("{not json"), FormatError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), std::exception);
}

TEST_CASE("seed replacement touches every seed") {
  const RunConfig c = RunConfig{}.with_seed(42);
  CHECK(c.task.seed == 42);
  CHECK(c.model.seed == 42);
  CHECK(c.teacher_model().context.kind == ContextKind::kFull);
  CHECK(c.student_model().context.kind == ContextKind::kCausal);
}

TEST_CASE("synthetic task: determinism and size contract") {
  SynthTaskConfig t;
  t.train_size = 30;
  t.eval_size = 10;
  const Corpus a = synth_generate(t);
  const Corpus b = synth_generate(t);
  REQUIRE(a.train.size() == 30);
  CHECK(a.clean.size() == 10);
  CHECK(a.noisy.size() == 10);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].features == b.train[i].features);
    CHECK(a.train[i].tokens == b.train[i].tokens);
    const std::size_t U = a.train[i].tokens.size();
    CHECK(U >= t.min_len);
    CHECK(U <= t.max_len);
    CHECK(a.train[i].features.shape() == Shape{t.frames_per_token * U, t.feature_dim});
    CHECK_NOTHROW(validate_tokens(a.train[i].tokens, t.vocab));
  }
  CHECK(a.clean[0].features != a.noisy[0].features);
  t.seed += 1;
  CHECK(synth_generate(t).train[0].features != a.train[0].features);
}

TEST_CASE("zero noise reproduces the templates") {
  SynthTaskConfig t;
  const auto utts = synth_split(t, 5, 0.0, 3);
  for (const auto& u : utts) {
    for (std::size_t k = 0; k < u.tokens.size(); ++k) {
      for (std::size_t f = 0; f < t.frames_per_token; ++f) {
        const auto tmpl = token_template(t, u.tokens[k], f);
        const std::size_t row = k * t.frames_per_token + f;
        for (std::size_t d = 0; d < t.feature_dim; ++d) CHECK(u.features.at(row, d) == tmpl[d]);
      }
    }
  }
  CHECK(token_template(t, 1, 0)[0] == 1.0);
  CHECK(token_template(t, 1, 1)[0] == 0.0);
}

TEST_CASE("synthetic task validation") {
  SynthTaskConfig t;
  t.min_len = 5;
  t.max_len = 4;
  CHECK_THROWS_AS(t.validate(), DomainError);
  t = SynthTaskConfig{};
  t.vocab = 1;
  CHECK_THROWS_AS(t.validate(), DomainError);
}

TEST_CASE("corpus directory round trip") {
  SynthTaskConfig t;
  t.train_size = 12;
  t.eval_size = 4;
  const Corpus c = synth_generate(t);
  const fs::path dir = scratch("corpus");
  write_corpus(dir.string(), t, c);
  CHECK(fs::exists(dir / "task.json"));
  CHECK(fs::exists(dir / "noisy.feats.atkd"));
  SynthTaskConfig back;
  const Corpus r = read_corpus(dir.string(), &back);
  CHECK(back == t);
  REQUIRE(r.train.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(r.train[i].features == c.train[i].features);
    CHECK(r.train[i].tokens == c.train[i].tokens);
  }
  {
    std::ofstream txt(dir / "clean.txt");
    txt << "1 2\n";
  }
  CHECK_THROWS_AS(read_corpus(dir.string()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip") {
  const ToyTransducer m = ToyTransducer::init(testing::small_model(3, ContextPolicy::causal(4, 1)));
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir.string(), m);
  CHECK(fs::exists(dir / "manifest.json"));
  const ToyTransducer back = load_checkpoint(dir.string());
  CHECK(back.config == m.config);
  CHECK(testing::flatten(back.params) == testing::flatten(m.params));
  CHECK(fs::remove(dir / "joint.out.w.atkd"));
  CHECK_THROWS(load_checkpoint(dir.string()));
  fs::remove_all(dir);
}
