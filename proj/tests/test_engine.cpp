// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <sstream>

#include "atkd/engine.hpp"
#include "atkd/matrix.hpp"
#include "test_util.hpp"

using namespace atkd;
using doctest::Approx;

namespace {

SynthTaskConfig tiny_task(std::uint64_t seed = 3) {
  SynthTaskConfig t;
  t.train_size = 64;
  t.eval_size = 16;
  t.max_len = 4;
  t.seed = seed;
  return t;
}

ModelConfig tiny_model(ContextPolicy ctx) {
  ModelConfig m;
  m.hidden_dim = 8;
  m.context = ctx;
  m.seed = 5;
  return m;
}

OptimizerConfig tiny_opt() {
  OptimizerConfig o;
  o.batch_size = 4;
  return o;
}

bool same_group(const TransducerParams& a, const TransducerParams& b, ParamGroup which) {
  std::vector<const Tensor*> left;
  visit_params(a, [&](std::string_view, ParamGroup g, const Tensor& t) {
    if (g == which) left.push_back(&t);
  });
  std::size_t i = 0;
  bool same = true;
  visit_params(b, [&](std::string_view, ParamGroup g, const Tensor& t) {
    if (g == which) same = same && (*left[i++] == t);
  });
  return same;
}

}  // namespace

TEST_CASE("schedules for every variant") {
  const StageSchedule two = make_schedule("two-stage-adaptive", 100);
  REQUIRE(two.stages.size() == 2);
  CHECK(two.stages[0] == StageWeights{1.0, 0.01, 50});
  CHECK(two.stages[1] == StageWeights{0.01, 1.0, 50});
  CHECK(two.output_kd == OutputKd::kAdaptive);
  CHECK_FALSE(two.freeze_enc_dec_in_stage2);

  CHECK(make_schedule("two-stage", 100).output_kd == OutputKd::kTemperature);
  CHECK(make_schedule("two-stage-fixed", 100).freeze_enc_dec_in_stage2);
  const StageSchedule h = make_schedule("hierarchical-kd", 100);
  CHECK(h.stages == std::vector<StageWeights>{{1.0, 1.0, 100}});
  CHECK(make_schedule("no-kd", 100).output_kd == OutputKd::kNone);
  CHECK(make_schedule("no-kd", 100).stages[0].alpha == 0.0);
  CHECK(make_schedule("traditional-kd", 100).output_kd == OutputKd::kTemperature);
  CHECK(make_schedule("stage1-only", 100).stages.size() == 1);
  CHECK(make_schedule("two-stage", 7, 0.3).stages[0].steps == 2);
  CHECK(make_schedule("two-stage", 7, 0.3).total_steps() == 7);
  for (const auto& v : known_variants()) CHECK_NOTHROW(make_schedule(v, 10));
  CHECK_THROWS_AS(make_schedule("bogus", 10), UsageError);
  CHECK_THROWS_AS(make_schedule("two-stage", 10, 1.0), DomainError);
  CHECK_THROWS_AS(make_schedule("two-stage", 10, 0.5, 0.5), DomainError);
}

TEST_CASE("schedule validation enforces main-task and sub-task weights") {
  StageSchedule s;
  s.stages = {{0.5, 0.5, 10}};
  CHECK_THROWS_AS(s.validate(), DomainError);
  s.stages = {{1.0, 0.1, 10}};
  CHECK_NOTHROW(s.validate());
  s.stages = {{1.0, 0.2, 10}};
  CHECK_THROWS_AS(s.validate(), DomainError);
  s.stages = {{1.0, 1.0, 10}};
  CHECK_NOTHROW(s.validate());
  s.stages = {};
  CHECK_THROWS_AS(s.validate(), DomainError);
}

TEST_CASE("edit distance, token error rate, relative reduction") {
  CHECK(edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
  CHECK(edit_distance({1, 2, 3}, {1, 2, 4}) == 1);
  CHECK(edit_distance({}, {1, 2}) == 2);
  CHECK(edit_distance({1, 2, 3}, {}) == 3);
  CHECK(edit_distance({1, 2, 3, 4}, {2, 3, 4, 5}) == 2);
  CHECK(token_error_rate({{1, 2, 3}}, {{1, 2, 4}}) == Approx(1.0 / 3.0));
  CHECK(token_error_rate({{1, 2}, {3}}, {{1, 2}, {3}}) == 0.0);
  CHECK(relative_reduction(0.10, 0.08) == Approx(20.0));
  CHECK_THROWS_AS(token_error_rate({}, {}), DomainError);
  CHECK_THROWS_AS(relative_reduction(0.0, 0.1), DomainError);
  CHECK_THROWS_AS(evaluate(ToyTransducer::init(tiny_model(ContextPolicy::causal())), {}), DomainError);
}

TEST_CASE("batch sampler is seeded and covers an epoch") {
  BatchSampler a(10, 5, 9), b(10, 5, 9);
  auto x = a.next(), y = a.next();
  CHECK(x == b.next());
  std::vector<std::size_t> all(x);
  all.insert(all.end(), y.begin(), y.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK_THROWS_AS(BatchSampler(0, 4, 1), DomainError);
}

TEST_CASE("parallel and serial batch gradients are bitwise identical") {
  omp_set_num_threads(4);
  const Corpus c = synth_generate(tiny_task());
  const ToyTransducer teacher = ToyTransducer::init(tiny_model(ContextPolicy::full()));
  const ToyTransducer student = ToyTransducer::init(tiny_model(ContextPolicy::causal()));
  const StageSchedule sched = make_schedule("two-stage-adaptive", 10);
  const auto targets = precompute_teacher_targets(teacher, c.train, sched);
  const std::vector<std::size_t> batch = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5};
  const StepWeights w{1.0, 1.0, OutputKd::kAdaptive, 1.0, KlDirection::kStudentFirst, {}};
  const BatchGradient a = batch_gradient(student, c.train, &targets, batch, w);
  const BatchGradient b = serial::batch_gradient(student, c.train, &targets, batch, w);
  CHECK(testing::flatten(a.grad) == testing::flatten(b.grad));
  CHECK(a.l_total == b.l_total);
  CHECK(a.l_kl > 0.0);
  CHECK(a.l_hidden > 0.0);
  omp_set_num_threads(1);
}

TEST_CASE("batch gradient loss follows the weighted total") {
  const Corpus c = synth_generate(tiny_task());
  const ToyTransducer teacher = ToyTransducer::init(tiny_model(ContextPolicy::full()));
  const ToyTransducer student = ToyTransducer::init(tiny_model(ContextPolicy::causal()));
  const auto targets = precompute_teacher_targets(teacher, c.train, make_schedule("two-stage", 10));
  const StepWeights w{1.0, 0.01, OutputKd::kTemperature, 1.0, KlDirection::kStudentFirst, {}};
  const BatchGradient g = batch_gradient(student, c.train, &targets, {0, 1, 2}, w);
  CHECK(g.l_total == Approx(g.l_hidden + 0.01 * (g.l_rnnt + g.l_kl)).epsilon(1e-12));
  CHECK_THROWS_AS(batch_gradient(student, c.train, nullptr, {0}, w), DomainError);
  CHECK_THROWS_AS(batch_gradient(student, c.train, &targets, {}, w), DomainError);
}

TEST_CASE("teacher training lowers the loss and is reproducible") {
  const Corpus c = synth_generate(tiny_task());
  TrainReport r1, r2;
  const ToyTransducer a = train_teacher(tiny_model(ContextPolicy::full()), c.train, 150, tiny_opt(), 1, &r1);
  const ToyTransducer b = train_teacher(tiny_model(ContextPolicy::full()), c.train, 150, tiny_opt(), 1, &r2);
  CHECK(testing::flatten(a.params) == testing::flatten(b.params));
  std::ostringstream s1, s2;
  write_report_csv(s1, r1);
  write_report_csv(s2, r2);
  CHECK(s1.str() == s2.str());
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += r1.records[i].l_rnnt;
    tail += r1.records[r1.records.size() - 1 - i].l_rnnt;
  }
  CHECK(tail < head);
  CHECK_THROWS_AS(train_teacher(tiny_model(ContextPolicy::causal()), c.train, 1, tiny_opt(), 1), DomainError);
}

TEST_CASE("non-finite loss aborts training with a diagnostic") {
  Corpus c = synth_generate(tiny_task());
  for (auto& u : c.train) u.features[0] = std::nan("");
  CHECK_THROWS_WITH_AS(train_teacher(tiny_model(ContextPolicy::full()), c.train, 3, tiny_opt(), 1),
                       doctest::Contains("diverged at step 1"), DomainError);
}

TEST_CASE("student training: stage boundary, freezing, teacher immutability, reproducibility") {
  const Corpus c = synth_generate(tiny_task());
  const ToyTransducer teacher = train_teacher(tiny_model(ContextPolicy::full()), c.train, 20, tiny_opt(), 1);
  const auto teacher_before = testing::flatten(teacher.params);

  const StageSchedule fixed = make_schedule("two-stage-fixed", 12, 0.25);
  std::optional<ToyTransducer> after_stage1;
  TrainReport report;
  const ToyTransducer student =
      train_student(teacher, tiny_model(ContextPolicy::causal()), fixed, c.train, tiny_opt(), 2, &report,
                    [&](int stage, const ToyTransducer& s) {
                      if (stage == 1) after_stage1 = s;
                    });
  REQUIRE(report.records.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(report.records[i].step == i + 1);
    CHECK(report.records[i].stage == (i < 3 ? 1 : 2));
    CHECK(report.records[i].alpha == (i < 3 ? 1.0 : 0.01));
    CHECK(report.records[i].beta == (i < 3 ? 0.01 : 1.0));
  }
  REQUIRE(after_stage1.has_value());
  CHECK(same_group(after_stage1->params, student.params, ParamGroup::kEncoder));
  CHECK(same_group(after_stage1->params, student.params, ParamGroup::kDecoder));
  CHECK_FALSE(same_group(after_stage1->params, student.params, ParamGroup::kJoint));
  CHECK(testing::flatten(teacher.params) == teacher_before);

  const ToyTransducer again =
      train_student(teacher, tiny_model(ContextPolicy::causal()), fixed, c.train, tiny_opt(), 2);
  CHECK(testing::flatten(again.params) == testing::flatten(student.params));

  const ToyTransducer unfrozen = train_student(teacher, tiny_model(ContextPolicy::causal()),
                                               make_schedule("two-stage-adaptive", 12, 0.25), c.train, tiny_opt(), 2);
  CHECK_FALSE(same_group(after_stage1->params, unfrozen.params, ParamGroup::kEncoder));
}

TEST_CASE("student and teacher must be shape-compatible") {
  const Corpus c = synth_generate(tiny_task());
  const ToyTransducer teacher = ToyTransducer::init(tiny_model(ContextPolicy::full()));
  ModelConfig wide = tiny_model(ContextPolicy::causal());
  wide.hidden_dim = 12;
  CHECK_THROWS_AS(train_student(teacher, wide, make_schedule("two-stage", 4), c.train, tiny_opt(), 1),
                  DimensionError);
}

TEST_CASE("report CSV columns") {
  TrainReport r;
  r.records.push_back({1, 1, 1.0, 0.01, 2.5, 0.5, 0.25, 0.5});
  std::ostringstream out;
  write_report_csv(out, r);
  CHECK(out.str() == "step,stage,alpha,beta,l_rnnt,l_hidden,l_kl,l_total\n1,1,1,0.01,2.5,0.5,0.25,0.5\n");
}

TEST_CASE("matrix with one variant and one seed gives a single row") {
  RunConfig cfg;
  cfg.task = tiny_task();
  cfg.model = tiny_model(ContextPolicy::causal());
  cfg.teacher.steps = 4;
  cfg.student.steps = 4;
  cfg.teacher.optimizer = cfg.student.optimizer = tiny_opt();
  const MatrixResult r = run_matrix(cfg, {1}, {"no-kd"});
  CHECK(r.rows.size() == 1);
  CHECK(r.summary().size() == 1);
  std::ostringstream out;
  write_matrix_csv(out, r);
  std::string header, row, rest;
  std::istringstream in(out.str());
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header ==
        "variant,seeds,ter_clean_mean,ter_clean_sd,ter_noisy_mean,ter_noisy_sd,first_emission_mean,"
        "rel_reduction_noisy_pct,wins_vs_no_kd");
  CHECK(row.rfind("no-kd,1,", 0) == 0);
  CHECK_FALSE(std::getline(in, rest));
  CHECK_THROWS_AS(run_matrix(cfg, {1}, {"nope"}), UsageError);
}

TEST_CASE("stage1-only reuses the two-stage-adaptive snapshot") {
  RunConfig cfg;
  cfg.task = tiny_task();
  cfg.model = tiny_model(ContextPolicy::causal());
  cfg.teacher.steps = 4;
  cfg.student.steps = 6;
  cfg.teacher.optimizer = cfg.student.optimizer = tiny_opt();
  const MatrixResult shared = run_matrix(cfg, {2}, {"two-stage-adaptive", "stage1-only"});
  const MatrixResult alone = run_matrix(cfg, {2}, {"stage1-only"});
  REQUIRE(shared.rows.size() == 2);
  CHECK(shared.rows[1].variant == "stage1-only");
  CHECK(shared.rows[1].noisy.ter == alone.rows[0].noisy.ter);
  CHECK(shared.rows[1].clean.mean_first_emission_frame == alone.rows[0].clean.mean_first_emission_frame);
}
