#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cantante/backend.hpp"
#include "cantante/engine.hpp"
#include "cantante/rng.hpp"
#include "cantante/tasks.hpp"
#include "cantante/types.hpp"

namespace cantante {

struct ComparisonGroup {
  std::string query_id;
  std::vector<int> member_config_indices;  // ordered, disjoint across groups
  std::string group_id;
};

struct AttributionOutcome {
  std::vector<CreditRecord> records;  // exactly one per (agent, member config)
  std::string raw_attributer_text;
  int parse_attempts = 0;
  std::vector<std::string> warnings;  // clamps, retries, defaults
};

/// Randomly partitions {1..k} into covering, disjoint groups. When g divides
/// k all groups have size g; otherwise floor(k/g) groups are formed and the
/// remainder is distributed one member per group from the first group on, so
/// no group is smaller than g and none larger than g+1 (unless floor(k/g)=1,
/// which collapses to a single group, as does g > k). Requires k >= 2, g >= 2.
std::vector<ComparisonGroup> partition_into_groups(int k, int g, SeedStream& rng,
                                                   const std::string& query_id = "");

/// One group member as the attributer sees it.
struct GroupMember {
  const Trajectory* trajectory = nullptr;
  const JointConfiguration* config = nullptr;
  double score = 0.0;
};

/// Renders the attribution ChatRequest (category=attribution) from the
/// instruction template: {n_configs} is replaced with the group size and
/// {rollouts} with the query followed by, per member configuration, every
/// agent's final extracted output (NOT-EXECUTED when the rollout skipped the
/// agent) and the system score.
ChatRequest build_attribution_request(const Query& query, const ComparisonGroup& group,
                                      const std::vector<GroupMember>& members,
                                      const WorkflowGraph& graph,
                                      std::string_view instruction_template);

/// Parses the credit block (lines `CREDIT <config> <agent> <value>` between
/// `===CREDITS===` and `===END===`; the last block in the text counts).
/// Values outside [-1,+1] are clamped to the boundary and noted; pairs the
/// block does not cover default to credit 0 with status parse-failed. Lines
/// naming unknown agents or configurations outside the group are ignored.
AttributionOutcome parse_credits(const std::string& text, const ComparisonGroup& group,
                                 const WorkflowGraph& graph);

class Attributer {
 public:
  virtual ~Attributer() = default;

  /// Members are ordered like group.member_config_indices. Returns exactly
  /// one CreditRecord per (agent, member config) pair, all in [-1,+1].
  virtual AttributionOutcome attribute_group(const Query& query,
                                             const ComparisonGroup& group,
                                             const std::vector<GroupMember>& members,
                                             const WorkflowGraph& graph) = 0;
};

/// The paper's mechanism: a prompted model contrasts the group's rollouts.
/// Equal-score groups are still submitted so intermediate-output contrasts can
/// break ties. Incomplete credit blocks trigger fresh attribution calls (up to
/// parse_retries); pairs still missing afterwards default to 0/parse-failed.
/// Agents a member rollout never executed are defaulted to
/// 0/defaulted-unexecuted without consulting the block.
class ContrastiveAttributer : public Attributer {
 public:
  ContrastiveAttributer(ChatBackend& backend, std::string instruction_template,
                        RetryPolicy transport_retry = {}, int parse_retries = 2);

  AttributionOutcome attribute_group(const Query& query, const ComparisonGroup& group,
                                     const std::vector<GroupMember>& members,
                                     const WorkflowGraph& graph) override;

 private:
  ChatBackend& backend_;
  std::string instruction_template_;
  RetryPolicy transport_retry_;
  int parse_retries_;
};

/// Ablation baseline: forwards each member's global score to every agent as
/// credit 2*s - 1, never calling a backend.
class IdentityAttributer : public Attributer {
 public:
  AttributionOutcome attribute_group(const Query& query, const ComparisonGroup& group,
                                     const std::vector<GroupMember>& members,
                                     const WorkflowGraph& graph) override;
};

/// Rank-faithful reference for the synthetic task: per agent, members are
/// ranked by true parameterization quality (average ranks on ties) and the
/// rank is mapped affinely onto [-1,+1].
class OracleAttributer : public Attributer {
 public:
  explicit OracleAttributer(QualityOracle quality) : quality_(std::move(quality)) {}

  AttributionOutcome attribute_group(const Query& query, const ComparisonGroup& group,
                                     const std::vector<GroupMember>& members,
                                     const WorkflowGraph& graph) override;

 private:
  QualityOracle quality_;
};

/// Arithmetic mean per (agent, config) over all queries of one iteration,
/// parse-failed zeros included. Records are summed in (query_id, config)
/// order so the result does not depend on input order. When expected_agents
/// and expected_k are given, a pair with zero records raises
/// std::runtime_error (it indicates a partitioning bug).
std::vector<AggregatedCredit> aggregate_credits(
    std::vector<CreditRecord> records,
    const std::vector<std::string>& expected_agents = {}, int expected_k = 0);

}  // namespace cantante
