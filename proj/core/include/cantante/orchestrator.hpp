#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cantante/attribution.hpp"
#include "cantante/backend.hpp"
#include "cantante/engine.hpp"
#include "cantante/optimizer.hpp"
#include "cantante/tasks.hpp"
#include "cantante/types.hpp"

namespace cantante {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AttributerKind { Contrastive, Identity, Oracle };

std::string_view to_string(AttributerKind k);
AttributerKind attributer_kind_from_string(std::string_view s);

struct BackendSettings {
  std::string kind = "synthetic";  // synthetic | http | scripted
  std::string base_url;            // http
  std::string model;               // http
  std::string api_key_env = "CANTANTE_API_KEY";
  int max_in_flight = 8;
  std::vector<std::string> script;  // scripted
};

struct TaskSettings {
  std::string kind = "synthetic";  // synthetic | file
  int n_agents = 4;                // synthetic
  int n_queries = 20;              // synthetic
  std::string graph_path;          // file
  std::string dataset_path;        // file
  std::string scorer = "synthetic";
};

struct RunConfig {
  TaskSettings task;
  BackendSettings downstream_backend;
  BackendSettings meta_backend;
  int k_configurations = 9;
  int group_size = 3;
  int max_iterations = 10;
  std::int64_t token_budget = 10'000'000;
  std::uint64_t seed = 42;
  AttributerKind attributer = AttributerKind::Contrastive;
  OptimizerKind optimizer = OptimizerKind::Evolutionary;
  int population_size = 6;
  int dev_size = 300;
  int test_size = 500;
  std::string output_dir = "run";
  std::string attribution_prompt_path;  // empty: built-in instruction
  bool keep_trajectories = false;
  int workers = 4;
  int retry_base_delay_ms = 250;
};

/// Validates invariants (K >= 2, g >= 2, budget > 0, population <= K, ...).
/// Throws ConfigError with the offending field.
void validate_run_config(const RunConfig& config);

/// Categorized token accounting against the run budget. Thread-safe; totals
/// only grow.
class TokenLedger {
 public:
  explicit TokenLedger(std::int64_t budget) : budget_(budget) {}

  void add(CallCategory category, const TokenTriple& usage);
  void restore(CallCategory category, const TokenTriple& total);  // resume path

  TokenTriple category_total(CallCategory category) const;
  TokenTriple grand_total() const;
  std::int64_t budget() const { return budget_; }

 private:
  mutable std::mutex mu_;
  std::int64_t budget_;
  TokenTriple totals_[3];
};

enum class BudgetDecision { Continue, Stop };

/// Stop iff the grand total has reached the budget. Called at iteration
/// boundaries only: an in-flight iteration always completes and its results
/// count.
BudgetDecision check_budget(const TokenLedger& ledger);

/// Usage-recording decorator; the orchestrator wraps every backend once so
/// engine, attributer and optimizers stay ledger-free.
class LedgerRecordingBackend : public ChatBackend {
 public:
  LedgerRecordingBackend(ChatBackend& inner, TokenLedger& ledger)
      : inner_(inner), ledger_(ledger) {}

  ChatResponse complete(const ChatRequest& request) override {
    ChatResponse response = inner_.complete(request);
    ledger_.add(request.category, response.usage);
    return response;
  }

 private:
  ChatBackend& inner_;
  TokenLedger& ledger_;
};

struct EvalResult {
  Trajectory trajectory;  // system_score filled in
  double score = 0.0;
};

struct EvalOptions {
  std::uint64_t run_seed = 0;
  RetryPolicy retry;
  int workers = 4;
  const ToolRegistry* tools = nullptr;  // defaults to the built-ins
};

/// K x |queries| rollouts on a bounded worker pool; exactly one rollout per
/// (config, query) pair, never the K^N cross product. Failed rollouts score 0
/// and stay flagged; the evaluation continues.
std::vector<std::vector<EvalResult>> evaluate_configurations(
    const std::vector<JointConfiguration>& configs, const std::vector<const Query*>& queries,
    const WorkflowGraph& graph, ChatBackend& backend, const Scorer& scorer,
    const EvalOptions& opts);

/// Empirical mean of the scores (the per-config dev objective).
double mean_score(const std::vector<EvalResult>& per_query);

struct BestConfiguration {
  int iteration = 0;     // 1-based; 0 = none yet
  int config_index = 0;  // 1-based
  double score = -1.0;
  std::map<std::string, std::string> prompts;  // agent -> template
};

struct IterationSummary {
  int iteration = 0;
  std::vector<double> mean_dev_scores;  // index c-1 = config c
  std::vector<AggregatedCredit> aggregated;
  TokenTriple downstream, optimizer, attribution;  // ledger snapshot afterwards
};

struct RunReport {
  BestConfiguration best;
  int iterations = 0;
  bool budget_exhausted = false;
  TokenTriple downstream, optimizer, attribution;
  std::int64_t grand_total = 0;
  long parse_failed_credits = 0;
  std::string output_dir;
};

/// Runs the full optimize loop: suggest -> assemble -> evaluate -> attribute
/// -> aggregate -> update, per iteration, with the budget checked at
/// iteration boundaries and full state persisted (atomically) every
/// iteration. The reported configuration is the dev-set maximum across all
/// recorded iterations, ties broken by earlier iteration then lower config
/// index.
class Orchestrator {
 public:
  /// Externally supplied backends (tests wrap the built-ins with recording
  /// decorators); the orchestrator still routes them through its ledger.
  struct BackendOverrides {
    ChatBackend* downstream = nullptr;
    ChatBackend* meta = nullptr;
  };

  explicit Orchestrator(RunConfig config);
  Orchestrator(RunConfig config, BackendOverrides overrides);
  ~Orchestrator();

  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  RunReport run();

  /// Continues from the last persisted snapshot in `output_dir`. With
  /// deterministic backends the continuation is identical to an uninterrupted
  /// run. Resuming a finished run re-emits its report without further work.
  static RunReport resume(const std::string& output_dir);

  const WorkflowGraph& graph() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Reads a RunConfig document (single JSON key-value tree; unknown keys are
/// rejected). `apply_override` mutates one scalar field from a key=value pair.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json run_config_to_json(const RunConfig& config);
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace cantante
