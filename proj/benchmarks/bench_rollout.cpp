#include <benchmark/benchmark.h>

#include "cantante/engine.hpp"
#include "cantante/tasks.hpp"

using namespace cantante;

static void BM_SyntheticRollout(benchmark::State& state) {
  const int n_agents = static_cast<int>(state.range(0));
  const SyntheticTask task = make_synthetic_task(n_agents, 1, 7);
  SyntheticQualityBackend backend(derive_seed(7, "downstream"));
  const ToolRegistry tools;

  JointConfiguration config;
  config.config_index = 1;
  for (const auto& agent : task.graph.agents) {
    config.per_agent[agent.agent_id] =
        make_synthetic_parameterization(agent.agent_id, 0.5);
  }
  RolloutOptions opts;
  opts.retry.base_delay_ms = 0;
  const Query& query = task.dataset.queries.front();

  for (auto _ : state) {
    benchmark::DoNotOptimize(
        execute_rollout(task.graph, config, query, backend, tools, opts));
  }
}
BENCHMARK(BM_SyntheticRollout)->Arg(2)->Arg(4)->Arg(8);
