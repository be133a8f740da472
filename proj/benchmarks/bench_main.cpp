// Hot paths: neighbour search, agreement counting, one balancing pass, SGD.
#include <benchmark/benchmark.h>

#include <noisebal/agreement.hpp>
#include <noisebal/balance.hpp>
#include <noisebal/dataset.hpp>
#include <noisebal/learn.hpp>
#include <noisebal/neighbors.hpp>

using namespace noisebal;

namespace {

LabeledDataset noisy_blobs(std::size_t n, std::size_t d, std::uint64_t seed) {
  SyntheticConfig c;
  c.n = n;
  c.d = d;
  c.cluster_count = 8;
  c.cluster_spread = 0.1;
  c.seed = seed;
  return inject_noise(generate_clusterable(c), BinaryClassNoise{0.1, 0.3}, seed + 1);
}

void BM_Neighbors(benchmark::State& state, NeighborBackend backend) {
  const auto ds = noisy_blobs(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(build_index(ds.features, backend));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_CAPTURE(BM_Neighbors, brute, NeighborBackend::kBruteForce)
    ->ArgsProduct({{2000, 10000}, {2, 8, 20}})
    ->Unit(benchmark::kMillisecond);
// The tree stops paying off past 8 features, so the 20-feature case stays small.
BENCHMARK_CAPTURE(BM_Neighbors, kdtree, NeighborBackend::kKdTree)
    ->ArgsProduct({{2000, 10000, 50000}, {2, 8}})
    ->Args({2000, 20})
    ->Args({10000, 20})
    ->Unit(benchmark::kMillisecond);

void BM_Agreements(benchmark::State& state) {
  const auto ds = noisy_blobs(static_cast<std::size_t>(state.range(0)), 4, 11);
  const auto idx = build_index(ds.features);
  for (auto _ : state) benchmark::DoNotOptimize(count_agreements(ds.noisy_labels, idx, ds.classes));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Agreements)->Arg(10000)->Arg(100000);

void BM_NoisePlus(benchmark::State& state) {
  const auto ds = noisy_blobs(static_cast<std::size_t>(state.range(0)), 4, 13);
  BalanceOptions opts;
  opts.seed = 5;
  for (auto _ : state) benchmark::DoNotOptimize(noise_plus(ds, opts));
}
BENCHMARK(BM_NoisePlus)->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);

void BM_Train(benchmark::State& state, LossSpec loss) {
  const auto ds = noisy_blobs(20000, static_cast<std::size_t>(state.range(0)), 17);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 3;
  for (auto _ : state) benchmark::DoNotOptimize(train(ds, loss, cfg));
  state.SetItemsProcessed(state.iterations() * 5 * 20000);
}
BENCHMARK_CAPTURE(BM_Train, ce, LossSpec{CrossEntropy{}})->Arg(4)->Arg(20)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Train, corrected, LossSpec{Corrected{0.3, 0.1}})->Arg(4)->Arg(20)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Train, peer, LossSpec{Peer{1.0, 9}})->Arg(4)->Arg(20)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
