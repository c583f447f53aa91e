#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "cantante/backend.hpp"
#include "cantante/rng.hpp"
#include "cantante/tasks.hpp"
#include "cantante/types.hpp"

namespace cantante {

/// A graph-wiring problem discovered during a rollout (unresolved placeholder,
/// ambiguous conditional match, missing carried variable). Distinct from
/// BackendError: transport failures mark the rollout failed instead.
class RolloutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RolloutContext {
  std::map<std::string, std::string> variable_store;
  std::map<std::string, int> loop_counters;  // back-edge id -> traversals taken
  SeedStream rng_stream;                     // from (run_seed, query_id, config_index)
};

struct RetryPolicy {
  int retries = 2;         // additional attempts after the first failure
  int base_delay_ms = 250; // doubled per attempt
};

struct RolloutOptions {
  std::uint64_t run_seed = 0;
  RetryPolicy retry;
  int max_tool_rounds = 3;  // follow-up generations after tool calls, per invocation
};

/// Substitutes every `{variable}` placeholder from the store; `{{` and `}}`
/// escape literal braces. The result is the exact text sent to the backend.
/// Throws RolloutError naming the variable when a placeholder cannot be
/// resolved.
std::string render_prompt(const AgentSpec& spec, const Parameterization& param,
                          const std::map<std::string, std::string>& variable_store);

/// Content of the last complete <tag>...</tag> pair in the raw output, or
/// kExtractionFailureMarker when no complete pair exists. Agents may emit
/// reasoning before the tag; the last occurrence is the one that counts.
std::string extract_output(std::string_view raw, std::string_view tag);

/// Executes one rollout of `graph` on `query` under `config`.
///
/// Routing: conditional families evaluate their predicates against the source
/// agent's extracted output (or a tagged field of it) and fall back to the
/// declared default; parallel branches run concurrently and their effects are
/// merged in declared edge order, so trajectories are deterministic for
/// deterministic backends. A loop-back edge is refused once its target agent
/// has been invoked loop-cap times; the rollout then ends with the last
/// terminal-agent output standing.
///
/// Transport failures are retried per `opts.retry`, after which the rollout
/// is marked failed (score 0, flagged) but still accounts every token it
/// consumed. Tool failures become error text in tool_calls and execution
/// continues.
Trajectory execute_rollout(const WorkflowGraph& graph, const JointConfiguration& config,
                           const Query& query, ChatBackend& backend,
                           const ToolRegistry& tools, const RolloutOptions& opts = {});

}  // namespace cantante
