// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

// OpenMP kernels against their serial references. Thread count follows
// OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>

#include "atkd/config.hpp"
#include "atkd/engine.hpp"
#include "atkd/smoothing.hpp"
#include "atkd/synth.hpp"

using namespace atkd;

namespace {

ProbLattice lattice(std::size_t T, std::size_t U1, std::size_t V) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  Tensor logits({T, U1, V});
  for (auto& x : logits.values()) x = u(rng);
  return ProbLattice::from_logits(logits);
}

template <auto Smooth>
void BM_Smooth(benchmark::State& state) {
  const ProbLattice q = lattice(static_cast<std::size_t>(state.range(0)), 20, 64);
  SmoothingConfig c;
  for (auto _ : state) benchmark::DoNotOptimize(Smooth(q, c));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(q.cells()));
}

template <auto Backward>
void BM_SmoothGradient(benchmark::State& state) {
  const ProbLattice q = lattice(static_cast<std::size_t>(state.range(0)), 20, 64);
  SmoothingConfig c;
  const SmoothingResult r = adaptive_smooth(q, c);
  const Tensor up = r.smoothed.probs();
  for (auto _ : state) benchmark::DoNotOptimize(Backward(q, up, r.gammas, c));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(q.cells()));
}

struct GradientFixture {
  Corpus corpus;
  ToyTransducer teacher, student;
  std::vector<TeacherTargets> targets;
  std::vector<std::size_t> batch;
  StepWeights weights;

  GradientFixture() {
    RunConfig cfg;
    cfg.task.train_size = 64;
    corpus = synth_generate(cfg.task);
    teacher = ToyTransducer::init(cfg.teacher_model());
    student = ToyTransducer::init(cfg.student_model());
    const StageSchedule s = cfg.schedule("two-stage-adaptive");
    targets = precompute_teacher_targets(teacher, corpus.train, s);
    for (std::size_t i = 0; i < 16; ++i) batch.push_back(i);
    weights = {0.01, 1.0, OutputKd::kAdaptive, 1.0, KlDirection::kStudentFirst, s.smoothing};
  }
};

template <auto Gradient>
void BM_BatchGradient(benchmark::State& state) {
  static const GradientFixture f;
  for (auto _ : state) {
    benchmark::DoNotOptimize(Gradient(f.student, f.corpus.train, &f.targets, f.batch, f.weights));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.size()));
}

}  // namespace

BENCHMARK(BM_Smooth<static_cast<SmoothingResult (*)(const ProbLattice&, const SmoothingConfig&)>(&adaptive_smooth)>)
    ->Name("adaptive_smooth/openmp")->Arg(50)->Arg(200);
BENCHMARK(BM_Smooth<&serial::adaptive_smooth>)->Name("adaptive_smooth/serial")->Arg(50)->Arg(200);
BENCHMARK(BM_SmoothGradient<static_cast<Tensor (*)(const ProbLattice&, const Tensor&, const Tensor&,
                                                    const SmoothingConfig&)>(&smooth_gradient)>)
    ->Name("smooth_gradient/openmp")->Arg(50)->Arg(200);
BENCHMARK(BM_SmoothGradient<&serial::smooth_gradient>)->Name("smooth_gradient/serial")->Arg(50)->Arg(200);
BENCHMARK(BM_BatchGradient<&batch_gradient>)->Name("batch_gradient/openmp");
BENCHMARK(BM_BatchGradient<&serial::batch_gradient>)->Name("batch_gradient/serial");

BENCHMARK_MAIN();
