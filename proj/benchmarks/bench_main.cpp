#include <benchmark/benchmark.h>

#include "flowdistill/analysis.hpp"
#include "flowdistill/distill.hpp"
#include "flowdistill/flow.hpp"
#include "flowdistill/optimizer.hpp"
#include "flowdistill/runtime.hpp"
#include "flowdistill/trajstore.hpp"

using namespace flowdistill;

namespace {

nn::VelocityModel bench_model(std::uint64_t seed) {
  auto m = nn::build_velocity_model(1, 64, 4, seed);
  // Give the zero-initialized output layer some weight so evaluation is not trivially zero.
  Rng rng(seed + 1);
  m.params()[m.params().tensor_count() - 2] = standard_normal(1, 64, rng) * 0.1;
  return m;
}

void BM_Velocity(benchmark::State& state) {
  const auto model = bench_model(1);
  Rng rng(2);
  const Matrix x = standard_normal(1, state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.velocity(x, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Velocity)->Arg(1)->Arg(64)->Arg(2048);

void BM_FmTrainStep(benchmark::State& state) {
  auto model = bench_model(3);
  auto opt = nn::make_adam(model.params(), nn::AdamConfig{});
  auto grads = model.params().zeros_like();
  const auto data = flow::ToyDataset::scalar({-3.0, 3.0});
  Rng rng(4);
  const auto b = state.range(0);
  for (auto _ : state) {
    flow::FlowBatch batch{data.sample(b, rng), standard_normal(1, b, rng), Vector::Constant(b, 0.37)};
    grads.set_zero();
    benchmark::DoNotOptimize(flow::fm_loss(model, batch, &grads));
    nn::optimizer_step(model.params(), grads, opt);
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_FmTrainStep)->Arg(256)->Arg(2048);

void BM_Denoise(benchmark::State& state) {
  const auto model = bench_model(5);
  Rng rng(6);
  const Matrix z = standard_normal(1, 4096, rng);
  const flow::TimeGrid grid(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(flow::denoise(model, z, grid));
}
BENCHMARK(BM_Denoise)->Arg(5)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_DistillRound(benchmark::State& state) {
  const auto teacher = bench_model(7);
  const auto store = trajstore::generate_store(teacher, 512, flow::TimeGrid(50), 8);
  distill::DistillConfig cfg;
  cfg.lambda_adv = state.range(0) ? 0.1 : 0.0;
  distill::Distiller d(teacher, store, distill::initial_state(teacher, cfg));
  for (auto _ : state) d.run_round();
}
BENCHMARK(BM_DistillRound)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_UselessFrequency(benchmark::State& state) {
  const auto teacher = bench_model(9);
  const auto store = trajstore::generate_store(teacher, 4096, flow::TimeGrid(50), 10);
  const auto p = flow::ToyDataset::scalar({-3.0, 3.0});
  analysis::UselessConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(analysis::useless_frequency(teacher, store, p, p, cfg));
}
BENCHMARK(BM_UselessFrequency)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
