#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cantante {

/// Inserted as an agent's extracted output when its raw output carries no
/// complete output tag. Downstream agents receive the marker verbatim so a
/// rollout stays comparable instead of aborting.
inline constexpr std::string_view kExtractionFailureMarker = "[[EXTRACTION-FAILED]]";

/// Placeholder shown to the attributer for agents a rollout never invoked.
inline constexpr std::string_view kNotExecutedMarker = "NOT-EXECUTED";

/// Pseudo edge target: traversing an edge to `$end` terminates the rollout.
inline constexpr std::string_view kEndTarget = "$end";

/// Carried-variable source key naming the source agent's extracted output.
inline constexpr std::string_view kOutputKey = "output";

struct TokenTriple {
  std::int64_t input = 0;
  std::int64_t output = 0;
  std::int64_t total = 0;

  static TokenTriple of(std::int64_t in, std::int64_t out) {
    return TokenTriple{in, out, in + out};
  }

  TokenTriple& operator+=(const TokenTriple& o) {
    input += o.input;
    output += o.output;
    total += o.total;
    return *this;
  }
  friend TokenTriple operator+(TokenTriple a, const TokenTriple& b) { return a += b; }
  bool operator==(const TokenTriple&) const = default;
};

struct GenerationSettings {
  double temperature = 0.7;
  int max_output_tokens = 512;
};

struct AgentSpec {
  std::string agent_id;
  std::string task_description;
  std::vector<std::string> input_variables;
  std::string output_tag;
  std::vector<std::string> tool_ids;
  GenerationSettings generation;
};

enum class PromptOrigin { Initial, Mutated, Crossover };

std::string_view to_string(PromptOrigin o);
PromptOrigin prompt_origin_from_string(std::string_view s);

struct Parameterization {
  std::string prompt_template;
  PromptOrigin origin = PromptOrigin::Initial;
  std::string lineage_id;
};

struct EdgeCondition {
  enum class Kind { Equals, Matches, Default };
  Kind kind = Kind::Default;
  /// Inner tag of the source's extracted output the predicate applies to;
  /// empty means the whole extracted output.
  std::string field;
  std::string value;  // literal for Equals, ECMAScript regex for Matches
};

enum class EdgeKind { Sequential, Conditional, ParallelBranch, LoopBack };

std::string_view to_string(EdgeKind k);
EdgeKind edge_kind_from_string(std::string_view s);

struct Edge {
  std::string edge_id;
  std::string from;
  std::string to;  // agent id or kEndTarget
  /// Ordered mapping source key -> target input variable. The key `output`
  /// names the source agent's extracted output; any other key passes an
  /// existing store variable through unchanged.
  std::vector<std::pair<std::string, std::string>> carries;
  std::optional<EdgeCondition> condition;
  EdgeKind kind = EdgeKind::Sequential;
};

struct WorkflowGraph {
  std::vector<AgentSpec> agents;
  std::vector<Edge> edges;
  std::string entry_agent;
  std::vector<std::string> terminal_agents;
  std::map<std::string, int> loop_caps;  // back-edge id -> cap (positive)

  const AgentSpec* find_agent(std::string_view agent_id) const;
  const Edge* find_edge(std::string_view edge_id) const;
  /// Out-edges of `agent_id` in declared order.
  std::vector<const Edge*> edges_from(std::string_view agent_id) const;
  bool is_terminal(std::string_view agent_id) const;
};

struct JointConfiguration {
  std::map<std::string, Parameterization> per_agent;
  int config_index = 0;  // 1-based, in [1, K]
};

enum class Split { Dev, Test };

struct Query {
  std::string query_id;
  std::map<std::string, std::string> input_payload;
  std::string ground_truth;
  Split split = Split::Dev;
};

struct ToolCall {
  std::string tool_id;
  std::string input;
  std::string output;
};

struct InvocationRecord {
  std::string agent_id;
  std::string rendered_prompt;
  std::string raw_output;
  std::string extracted_output;
  std::vector<ToolCall> tool_calls;
  TokenTriple tokens;
  int invocation_ordinal = 1;  // 1-based per agent within the rollout
};

struct Trajectory {
  std::string query_id;
  int config_index = 0;
  std::vector<InvocationRecord> invocations;
  std::string final_prediction;
  double system_score = 0.0;
  TokenTriple token_usage;
  bool failed = false;  // backend transport failure after retries

  /// Extracted output of the agent's highest-ordinal invocation, or
  /// kNotExecutedMarker if the rollout never reached it.
  std::string final_output_of(std::string_view agent_id) const;
};

enum class AttributionStatus { Attributed, DefaultedUnexecuted, ParseFailed };

std::string_view to_string(AttributionStatus s);
AttributionStatus attribution_status_from_string(std::string_view s);

struct CreditRecord {
  std::string query_id;
  std::string agent_id;
  int config_index = 0;
  double credit = 0.0;  // clamped to [-1, +1]
  std::string group_id;
  AttributionStatus status = AttributionStatus::Attributed;
};

struct AggregatedCredit {
  std::string agent_id;
  int config_index = 0;
  double value = 0.0;
  int n_queries = 0;
};

struct Violation {
  std::string where;    // offending element (agent/edge id or section)
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// `{name}` placeholders found in a template, in order of appearance.
/// `{{` escapes a literal brace; names are identifiers ([A-Za-z_][A-Za-z0-9_]*).
std::vector<std::string> extract_placeholders(std::string_view tmpl);

/// A resolved parallel fan-out: branch edges in declared order, the unique
/// join agent their chains converge on, the per-branch agent chains up to and
/// including the join, and any plain source->join feed edges.
struct ParallelGroup {
  std::vector<const Edge*> branch_edges;
  std::vector<const Edge*> feed_edges;
  std::string join;
  std::vector<std::vector<std::string>> chains;  // per branch, excluding the join
};

/// Resolves the fan-out rooted at `source`. On failure returns std::nullopt
/// and appends the reason to `error` when non-null.
std::optional<ParallelGroup> resolve_parallel_group(const WorkflowGraph& graph,
                                                    std::string_view source,
                                                    std::string* error = nullptr);

/// Structural validation of every WorkflowGraph invariant. Returns an empty
/// report iff the graph is valid; never throws.
std::vector<Violation> validate_graph(const WorkflowGraph& graph);

/// Checks a prompt template against its owning agent: every declared input
/// variable appears as a `{variable}` placeholder at least once and the output
/// tag literal is mentioned.
std::vector<Violation> validate_parameterization(const AgentSpec& spec,
                                                 const Parameterization& param);

/// Pairs candidate i of every agent into joint configuration i (1-based).
/// K rollouts per query suffice; the K^N cross product is never formed.
/// Throws std::invalid_argument when candidate counts differ across agents.
std::vector<JointConfiguration> assemble_joint_configurations(
    const std::map<std::string, std::vector<Parameterization>>& candidates);

}  // namespace cantante
