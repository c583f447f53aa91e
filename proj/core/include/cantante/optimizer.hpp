#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cantante/backend.hpp"
#include "cantante/engine.hpp"
#include "cantante/rng.hpp"
#include "cantante/types.hpp"

namespace cantante {

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScoredParameterization {
  Parameterization param;
  std::optional<double> fitness;  // aggregated credit from the last update
};

struct OptimizerState {
  std::string agent_id;
  std::vector<ScoredParameterization> population;  // size stays constant
  int generation = 0;
  SeedStream rng_stream{0};
  std::vector<Parameterization> last_suggestion;  // what update() must cover
};

/// Meta-LLM instruction templates. The built-in set ships embedded; files can
/// override individual templates through the run config.
struct MetaPrompts {
  std::string generation;
  std::string crossover;
  std::string mutation;

  static MetaPrompts builtin();
};

struct SuggestStats {
  int meta_calls = 0;
  int regenerations = 0;  // interface-violation retries that were needed
  int fallbacks = 0;      // offspring replaced by a copy of the best parent
};

/// Black-box per-agent search over parameterizations: Algorithm-style
/// suggest/update. Fitness is the aggregated credit, not the system score.
class LocalOptimizer {
 public:
  virtual ~LocalOptimizer() = default;

  /// K = population + offspring candidates; candidates 1..population are the
  /// current population verbatim. Records the suggestion in the state.
  virtual std::vector<Parameterization> suggest(OptimizerState& state) = 0;

  /// Installs each candidate's aggregated credit as its fitness and keeps the
  /// top population_size candidates (ties broken by lower candidate index).
  /// Throws OptimizerError when pairs do not cover exactly the last
  /// suggestion set.
  virtual void update(OptimizerState& state,
                      const std::vector<std::pair<Parameterization, double>>& pairs) = 0;

  virtual SuggestStats last_stats() const = 0;
};

struct EvoOptions {
  int population_size = 6;
  int offspring = 3;
  int regeneration_attempts = 3;  // per meta step, before falling back
  RetryPolicy transport_retry;
};

/// Evolutionary prompt search: each offspring is a meta-LLM crossover of two
/// rank-weighted parents followed by a mutation, with interface validation
/// and regeneration. Parent sampling is proportional to rank rather than raw
/// credit so negative credits stay well-defined.
class EvolutionaryPromptOptimizer : public LocalOptimizer {
 public:
  EvolutionaryPromptOptimizer(AgentSpec spec, ChatBackend& meta_backend,
                              MetaPrompts prompts, EvoOptions options = {});

  std::vector<Parameterization> suggest(OptimizerState& state) override;
  void update(OptimizerState& state,
              const std::vector<std::pair<Parameterization, double>>& pairs) override;
  SuggestStats last_stats() const override { return stats_; }

 protected:
  Parameterization run_meta_step(const std::string& instruction_filled,
                                 const Parameterization& fallback, PromptOrigin origin,
                                 const std::string& lineage);
  std::pair<std::size_t, std::size_t> sample_two_parents(OptimizerState& state);
  std::size_t sample_rank_weighted(OptimizerState& state,
                                   std::optional<std::size_t> exclude);
  const ScoredParameterization& best_of(const OptimizerState& state) const;

  AgentSpec spec_;
  ChatBackend& meta_backend_;
  MetaPrompts prompts_;
  EvoOptions options_;
  SuggestStats stats_;
};

/// Variant used by the alternative-optimizer comparison: offspring are
/// single-parent mutations, no crossover.
class ParaphraseOptimizer : public EvolutionaryPromptOptimizer {
 public:
  using EvolutionaryPromptOptimizer::EvolutionaryPromptOptimizer;

  std::vector<Parameterization> suggest(OptimizerState& state) override;
};

enum class OptimizerKind { Evolutionary, Paraphrase };

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(std::string_view s);

std::unique_ptr<LocalOptimizer> make_optimizer(OptimizerKind kind, AgentSpec spec,
                                               ChatBackend& meta_backend,
                                               MetaPrompts prompts, EvoOptions options = {});

/// Generates n validated initial parameterizations from the agent's task
/// description, regenerating each slot up to `regeneration_attempts` times on
/// interface violations. Persistent violations raise OptimizerError naming
/// the agent.
std::vector<Parameterization> generate_initial_prompts(const AgentSpec& agent, int n,
                                                       ChatBackend& meta_backend,
                                                       const MetaPrompts& prompts,
                                                       int regeneration_attempts = 3,
                                                       RetryPolicy transport_retry = {});

}  // namespace cantante
