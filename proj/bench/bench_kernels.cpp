// Tuned kernels against their serial references. Thread count follows
// OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dnfn/data.hpp"
#include "dnfn/harness.hpp"
#include "dnfn/kernels.hpp"
#include "dnfn/neighborhood.hpp"
#include "dnfn/network.hpp"

namespace {

using namespace dnfn;

std::vector<Point3> cloud(std::size_t n) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<Point3> p(n);
  for (auto& q : p) q = {u(rng), u(rng), u(rng)};
  return p;
}

std::vector<float> buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

template <bool Tuned>
void BM_Knn(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)));
  const auto centers = all_centers(pts.size());
  for (auto _ : state) {
    auto r = Tuned ? knn(pts, centers, 16) : serial::knn(pts, centers, 16);
    benchmark::DoNotOptimize(r.indices.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Tuned>
void BM_BallQuery(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)));
  const auto centers = all_centers(pts.size());
  for (auto _ : state) {
    auto r = Tuned ? ball_query(pts, centers, 0.3, 16) : serial::ball_query(pts, centers, 0.3, 16);
    benchmark::DoNotOptimize(r.indices.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Tuned>
void BM_Fps(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)));
  const std::size_t m = pts.size() / 4;
  for (auto _ : state) {
    auto r = Tuned ? fps(pts, m, 0) : serial::fps(pts, m, 0);
    benchmark::DoNotOptimize(r.data());
  }
}

template <bool Tuned>
void BM_LinearForward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  const auto x = buffer(m * width, 1);
  const auto w = buffer(width * width, 2);
  const auto b = buffer(width, 3);
  std::vector<float> y(m * width);
  for (auto _ : state) {
    if (Tuned) {
      kernels::linear_forward(x.data(), w.data(), b.data(), y.data(), m, width, width);
    } else {
      kernels::serial::linear_forward(x.data(), w.data(), b.data(), y.data(), m, width, width);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * width * width));
}

template <bool Tuned>
void BM_LinearBackwardParams(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  const auto dy = buffer(m * width, 4);
  const auto x = buffer(m * width, 5);
  std::vector<float> dw(width * width), db(width);
  for (auto _ : state) {
    if (Tuned) {
      kernels::linear_backward_params(dy.data(), x.data(), dw.data(), db.data(), m, width, width);
    } else {
      kernels::serial::linear_backward_params(dy.data(), x.data(), dw.data(), db.data(), m, width,
                                              width);
    }
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * width * width));
}

void BM_EvalForward(benchmark::State& state) {
  NetworkConfig config;
  auto params = ModelParams<float>::init(config, 1);
  const auto data = gen_dataset({"sphere", "cube", "cylinder", "cone"}, 4, 256, 1, Split::test);
  for (auto _ : state) {
    auto logits = eval_logits(params, config, data.clouds);
    benchmark::DoNotOptimize(logits.values.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.clouds.size()));
}

}  // namespace

BENCHMARK(BM_Knn<false>)->Name("knn/serial")->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_Knn<true>)->Name("knn/tuned")->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_BallQuery<false>)->Name("ball_query/serial")->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_BallQuery<true>)->Name("ball_query/tuned")->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_Fps<false>)->Name("fps/serial")->Arg(1024)->Arg(4096);
BENCHMARK(BM_Fps<true>)->Name("fps/tuned")->Arg(1024)->Arg(4096);
BENCHMARK(BM_LinearForward<false>)->Name("linear_forward/serial")->Args({4096, 64})->Args({2048, 128});
BENCHMARK(BM_LinearForward<true>)->Name("linear_forward/tuned")->Args({4096, 64})->Args({2048, 128});
BENCHMARK(BM_LinearBackwardParams<false>)->Name("linear_backward_params/serial")->Args({4096, 64});
BENCHMARK(BM_LinearBackwardParams<true>)->Name("linear_backward_params/tuned")->Args({4096, 64});
BENCHMARK(BM_EvalForward)->Name("network/eval_16_clouds")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
