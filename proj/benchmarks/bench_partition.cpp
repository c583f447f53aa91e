#include <benchmark/benchmark.h>

#include "cantante/attribution.hpp"

using namespace cantante;

static void BM_PartitionIntoGroups(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const int g = static_cast<int>(state.range(1));
  std::uint64_t counter = 0;
  for (auto _ : state) {
    SeedStream rng(counter++);
    benchmark::DoNotOptimize(partition_into_groups(k, g, rng, "q1"));
  }
}
BENCHMARK(BM_PartitionIntoGroups)->Args({9, 3})->Args({10, 3})->Args({64, 5});

static void BM_AggregateCredits(benchmark::State& state) {
  const int k = 9;
  const int n_queries = static_cast<int>(state.range(0));
  std::vector<CreditRecord> records;
  SeedStream rng(7);
  for (int q = 0; q < n_queries; ++q) {
    for (int a = 0; a < 4; ++a) {
      for (int c = 1; c <= k; ++c) {
        CreditRecord rec;
        rec.query_id = "q" + std::to_string(q);
        rec.agent_id = "agent" + std::to_string(a);
        rec.config_index = c;
        rec.credit = rng.next_unit() * 2 - 1;
        records.push_back(rec);
      }
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate_credits(records));
  }
}
BENCHMARK(BM_AggregateCredits)->Arg(20)->Arg(300);
