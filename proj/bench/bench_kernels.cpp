// Serial reference vs OpenMP paths for the data-parallel kernels.
#include <benchmark/benchmark.h>

#include <vector>

#include "isotropy/eval.h"
#include "isotropy/kernel.h"
#include "isotropy/rng.h"

using namespace isotropy;

namespace {

EmbeddingSet random_set(CounterRng& rng, std::size_t n, std::size_t d) {
    std::vector<Embedding> rows;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.normal();
        rows.emplace_back(std::move(v));
    }
    return EmbeddingSet(std::move(rows));
}

std::vector<TopicObservation> linear_cloud(std::size_t topics) {
    CounterRng rng(3);
    std::vector<TopicObservation> obs;
    for (std::size_t t = 0; t < topics; ++t) {
        const double x = rng.normal();
        obs.push_back({"t" + std::to_string(t), x, x + rng.normal(), "vne", 10});
    }
    return obs;
}

void BM_CosineKernel(benchmark::State& state, Exec exec) {
    CounterRng rng(1);
    const auto set = random_set(rng, static_cast<std::size_t>(state.range(0)), 1536);
    for (auto _ : state) benchmark::DoNotOptimize(cosine_kernel(set, exec));
}

void BM_Bootstrap(benchmark::State& state, Exec exec) {
    const auto obs = linear_cloud(static_cast<std::size_t>(state.range(0)));
    BootstrapConfig cfg{.n_boot = 1500, .seed = 42, .exec = exec};
    for (auto _ : state) benchmark::DoNotOptimize(bootstrap_r2(obs, cfg));
}

void BM_ScoreTopics(benchmark::State& state, Exec exec) {
    CounterRng rng(2);
    std::vector<EmbeddingSet> sets;
    for (int t = 0; t < state.range(0); ++t) sets.push_back(random_set(rng, 10, 768));
    for (auto _ : state) benchmark::DoNotOptimize(score_topics(sets, all_measures(), {}, exec));
}

}  // namespace

BENCHMARK_CAPTURE(BM_CosineKernel, serial, Exec::serial)->Arg(10)->Arg(20)->Arg(32);
BENCHMARK_CAPTURE(BM_CosineKernel, parallel, Exec::parallel)->Arg(10)->Arg(20)->Arg(32);
BENCHMARK_CAPTURE(BM_Bootstrap, serial, Exec::serial)->Arg(200)->Arg(1000);
BENCHMARK_CAPTURE(BM_Bootstrap, parallel, Exec::parallel)->Arg(200)->Arg(1000);
BENCHMARK_CAPTURE(BM_ScoreTopics, serial, Exec::serial)->Arg(100);
BENCHMARK_CAPTURE(BM_ScoreTopics, parallel, Exec::parallel)->Arg(100);

BENCHMARK_MAIN();
