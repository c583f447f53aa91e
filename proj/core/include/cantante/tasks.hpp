#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cantante/types.hpp"

namespace cantante {

struct Dataset {
  std::vector<Query> queries;  // dev block first, then test block
  int dev_size = 0;
  int test_size = 0;
  std::string source;      // file path or "synthetic"
  std::uint64_t seed = 0;  // seed used for the split shuffle

  std::vector<const Query*> dev() const;
  std::vector<const Query*> test() const;
};

/// Line-delimited records with `id`, `input` (string or object of named
/// variables) and `answer` fields; optional `test_spec` for predicate scoring.
/// Shuffles with the seed, then takes dev_size + test_size disjoint queries.
/// Throws std::runtime_error naming the line number on malformed records and
/// when the file holds fewer than dev_size + test_size records.
Dataset load_dataset(const std::string& path, int dev_size, int test_size,
                     std::uint64_t seed);

/// System scorers map (prediction, query) to a score in [0, 1]; built-ins are
/// 0/1. A scorer returning a value outside [0, 1] is a bug in the scorer and
/// raises ScoreRangeError instead of being clamped.
using Scorer = std::function<double(const std::string& prediction, const Query& query)>;

class ScoreRangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 1 iff the normalized strings are equal; normalization trims, collapses
/// internal whitespace runs and case-folds (ASCII).
double exact_match_score(const std::string& prediction, const std::string& ground_truth);

/// 1 iff the last decimal-number token in the prediction equals the ground
/// truth within 1e-6. The ground truth must itself parse as a number
/// (std::invalid_argument otherwise); an unparseable prediction scores 0.
double numeric_match_score(const std::string& prediction, const std::string& ground_truth);

/// One check of a predicate test specification.
struct PredicateCheck {
  std::string predicate;  // registered id: contains / not_contains / matches / numeric_equals
  std::string argument;
};

/// 1 iff every check accepts the prediction (mirrors pass-all-test-cases
/// scoring). Empty spec or an unknown predicate id is an error.
double predicate_test_score(const std::string& prediction,
                            const std::vector<PredicateCheck>& test_spec);

std::vector<PredicateCheck> parse_test_spec(const std::string& serialized_json);

/// Named scorer registry. Registration wraps every scorer with a range check
/// so out-of-range values fail loudly at scoring time.
class ScorerRegistry {
 public:
  ScorerRegistry();  // registers exact_match, numeric_match, predicate, synthetic

  void register_scorer(const std::string& name, Scorer scorer);
  Scorer get(const std::string& name) const;  // throws on unknown name

 private:
  std::map<std::string, Scorer> scorers_;
};

/// Deterministic text -> text tools with a per-call timeout. Tools are total:
/// failures and timeouts come back as error text, never as exceptions, so a
/// tool can never abort a rollout.
class ToolRegistry {
 public:
  using ToolFn = std::function<std::string(const std::string&)>;

  void register_tool(const std::string& tool_id, ToolFn fn, int timeout_ms = 2000);
  bool has(const std::string& tool_id) const;
  /// Unknown ids, thrown exceptions and timeouts all yield "[tool-error] ..."
  std::string invoke(const std::string& tool_id, const std::string& input) const;

  /// echo, char_count, arith (integer +-*/ with parentheses)
  static ToolRegistry with_builtins();

 private:
  struct Entry {
    ToolFn fn;
    int timeout_ms;
  };
  std::map<std::string, Entry> tools_;
};

/// Ground-truth quality of one parameterization on the synthetic task
/// (the embedded skill value). Used by the oracle attributer and the
/// attribution-fidelity checks.
using QualityOracle = std::function<double(const std::string& agent_id,
                                           const Parameterization& param)>;

struct SyntheticTask {
  WorkflowGraph graph;
  Dataset dataset;
  Scorer scorer;
  QualityOracle quality;
};

/// Linear chain of n_agents agents over the synthetic-quality backend. Query
/// difficulties are uniform draws; the system score is 1 iff every agent
/// forwarded the payload intact, i.e. iff every agent on the path answered
/// correctly, which makes per-agent contributions identifiable.
SyntheticTask make_synthetic_task(int n_agents, int n_queries, std::uint64_t seed);

/// Template with the given skill for agent `agent_id` of the synthetic graph.
Parameterization make_synthetic_parameterization(const std::string& agent_id, double skill);

}  // namespace cantante
