#include <random>

#include <benchmark/benchmark.h>

#include "geodistill/kernels.hpp"
#include "geodistill/parallel.hpp"

using namespace geodistill;

namespace {

FeatureMatrix random_rows(int n, int d, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> normal;
  FeatureMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  m.rowwise().normalize();
  return m;
}

std::vector<Vec3> random_points(int n) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> p(n);
  for (auto& v : p) v = Vec3(u(rng), u(rng), u(rng));
  return p;
}

void BM_argmax_serial(benchmark::State& state) {
  const auto q = random_rows(static_cast<int>(state.range(0)), 64, 1);
  const auto c = random_rows(static_cast<int>(state.range(0)), 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::argmax_cosine_serial(q, c));
}

void BM_argmax_parallel(benchmark::State& state) {
  set_thread_count(static_cast<int>(state.range(1)));
  const auto q = random_rows(static_cast<int>(state.range(0)), 64, 1);
  const auto c = random_rows(static_cast<int>(state.range(0)), 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::argmax_cosine_parallel(q, c));
  set_thread_count(1);
}

void BM_extent_serial(benchmark::State& state) {
  const auto p = random_points(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::max_pairwise_distance_serial(p));
}

void BM_extent_parallel(benchmark::State& state) {
  set_thread_count(static_cast<int>(state.range(1)));
  const auto p = random_points(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::max_pairwise_distance_parallel(p));
  set_thread_count(1);
}

}  // namespace

BENCHMARK(BM_argmax_serial)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_argmax_parallel)->Args({1000, 1})->Args({1000, 4})->Args({4000, 1})->Args({4000, 4})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_extent_serial)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_extent_parallel)->Args({2000, 1})->Args({2000, 4})->Args({8000, 1})->Args({8000, 4})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
