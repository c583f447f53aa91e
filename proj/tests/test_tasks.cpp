#include "doctest.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "cantante/analysis.hpp"
#include "cantante/attribution.hpp"
#include "cantante/engine.hpp"
#include "cantante/orchestrator.hpp"
#include "cantante/tasks.hpp"
#include "helpers.hpp"

using namespace cantante;
using namespace cantante::testing;

namespace {

std::string write_temp_jsonl(const std::string& name, const std::vector<std::string>& lines) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::trunc);
  for (const auto& line : lines) out << line << "\n";
  return path.string();
}

std::vector<std::string> numbered_records(int n) {
  std::vector<std::string> lines;
  for (int i = 0; i < n; ++i) {
    lines.push_back(R"({"id": "r)" + std::to_string(i) + R"(", "input": "question )" +
                    std::to_string(i) + R"(", "answer": ")" + std::to_string(i) + R"("})");
  }
  return lines;
}

}  // namespace

TEST_CASE("load_dataset splits deterministically and leaves extras unused") {
  const auto path = write_temp_jsonl("cant_ds1.jsonl", numbered_records(10));
  const Dataset ds = load_dataset(path, 3, 4, 42);
  CHECK(ds.queries.size() == 7);  // 3 unused records
  CHECK(ds.dev().size() == 3);
  CHECK(ds.test().size() == 4);
  CHECK(ds.source == path);
  CHECK(ds.seed == 42);

  // dev and test are disjoint
  std::set<std::string> dev_ids, test_ids;
  for (const auto* q : ds.dev()) dev_ids.insert(q->query_id);
  for (const auto* q : ds.test()) test_ids.insert(q->query_id);
  for (const auto& id : dev_ids) CHECK(test_ids.count(id) == 0);

  // same file and seed reproduce the same split
  const Dataset again = load_dataset(path, 3, 4, 42);
  for (std::size_t i = 0; i < ds.queries.size(); ++i) {
    CHECK(ds.queries[i].query_id == again.queries[i].query_id);
    CHECK(ds.queries[i].split == again.queries[i].split);
  }

  // a different seed reshuffles
  const Dataset other = load_dataset(path, 3, 4, 7);
  bool any_difference = false;
  for (std::size_t i = 0; i < ds.queries.size(); ++i) {
    if (ds.queries[i].query_id != other.queries[i].query_id) any_difference = true;
  }
  CHECK(any_difference);
}

TEST_CASE("load_dataset rejects undersized files and malformed lines") {
  const auto path = write_temp_jsonl("cant_ds2.jsonl", numbered_records(5));
  CHECK_THROWS_AS(load_dataset(path, 4, 4, 1), std::runtime_error);

  auto lines = numbered_records(3);
  lines.insert(lines.begin() + 1, "{not json");
  const auto bad = write_temp_jsonl("cant_ds3.jsonl", lines);
  CHECK_THROWS_WITH_AS(load_dataset(bad, 2, 1, 1), doctest::Contains("line 2"),
                       std::runtime_error);

  CHECK_THROWS_AS(load_dataset("/nonexistent/nowhere.jsonl", 1, 1, 1), std::runtime_error);
}

TEST_CASE("load_dataset accepts object inputs and test_spec passthrough") {
  const auto path = write_temp_jsonl(
      "cant_ds4.jsonl",
      {R"({"id": "a", "input": {"question": "q", "hint": "h"}, "answer": "x",)"
       R"( "test_spec": [{"predicate": "contains", "argument": "x"}]})"});
  const Dataset ds = load_dataset(path, 1, 0, 1);
  const Query& q = ds.queries[0];
  CHECK(q.input_payload.at("question") == "q");
  CHECK(q.input_payload.at("hint") == "h");
  CHECK(q.input_payload.count("__test_spec") == 1);
}

TEST_CASE("exact_match_score normalizes whitespace and case") {
  CHECK(exact_match_score("42", "42") == 1.0);
  CHECK(exact_match_score(" 42\n", "42") == 1.0);
  CHECK(exact_match_score("41", "42") == 0.0);
  CHECK(exact_match_score("The  Answer", "the answer") == 1.0);
  CHECK(exact_match_score("", "") == 1.0);
}

TEST_CASE("numeric_match_score takes the last number within tolerance") {
  CHECK(numeric_match_score("the answer is 18.", "18") == 1.0);
  CHECK(numeric_match_score("18.0000001", "18") == 1.0);
  CHECK(numeric_match_score("no number", "18") == 0.0);
  CHECK(numeric_match_score("first 3 then 18", "18") == 1.0);
  CHECK(numeric_match_score("first 18 then 3", "18") == 0.0);
  CHECK(numeric_match_score("6e2", "600") == 1.0);
  CHECK_THROWS_AS(numeric_match_score("42", "not-a-number"), std::invalid_argument);
}

TEST_CASE("predicate_test_score requires every check to pass") {
  const std::vector<PredicateCheck> spec{{"contains", "def solve"},
                                         {"matches", "return .*"},
                                         {"not_contains", "TODO"}};
  CHECK(predicate_test_score("def solve():\n  return 4", spec) == 1.0);
  CHECK(predicate_test_score("def solve():\n  return 4  # TODO", spec) == 0.0);
  CHECK(predicate_test_score("pass", spec) == 0.0);

  CHECK_THROWS_AS(predicate_test_score("x", {}), std::invalid_argument);
  CHECK_THROWS_WITH_AS(predicate_test_score("x", {{"frobnicate", "y"}}),
                       doctest::Contains("unknown predicate"), std::invalid_argument);
}

TEST_CASE("parse_test_spec reads the serialized dataset field") {
  const auto checks =
      parse_test_spec(R"([{"predicate": "contains", "argument": "abc"}])");
  REQUIRE(checks.size() == 1);
  CHECK(checks[0].predicate == "contains");
  CHECK(checks[0].argument == "abc");
  CHECK_THROWS_AS(parse_test_spec("{}"), std::invalid_argument);
}

TEST_CASE("scorer registry rejects out-of-range custom scorers loudly") {
  ScorerRegistry registry;
  registry.register_scorer("broken", [](const std::string&, const Query&) { return 1.5; });
  const Scorer broken = registry.get("broken");
  Query q;
  CHECK_THROWS_AS(broken("x", q), ScoreRangeError);

  registry.register_scorer("fine", [](const std::string&, const Query&) { return 0.25; });
  CHECK(registry.get("fine")("x", q) == 0.25);

  CHECK_THROWS_AS(registry.get("missing"), std::invalid_argument);
}

TEST_CASE("built-in scorers are pure and reusable") {
  ScorerRegistry registry;
  Query q;
  q.ground_truth = "42";
  const Scorer em = registry.get("exact_match");
  CHECK(em("42", q) == 1.0);
  CHECK(em("42", q) == 1.0);
  CHECK(em("41", q) == 0.0);
}

TEST_CASE("tool registry: unknown tools, errors and timeouts become text") {
  ToolRegistry reg = ToolRegistry::with_builtins();
  CHECK(reg.invoke("echo", "hello") == "hello");
  CHECK(reg.invoke("char_count", "four") == "4");
  CHECK(reg.invoke("arith", "2*(3+4)") == "14");
  CHECK(reg.invoke("arith", "10/4") == "2.5");
  CHECK(contains(reg.invoke("arith", "1/0"), "[tool-error]"));
  CHECK(contains(reg.invoke("nope", "x"), "unknown tool"));

  reg.register_tool("sleepy",
                    [](const std::string&) {
                      std::this_thread::sleep_for(std::chrono::milliseconds(300));
                      return std::string("late");
                    },
                    50);
  CHECK(contains(reg.invoke("sleepy", "x"), "timeout"));

  reg.register_tool("thrower",
                    [](const std::string&) -> std::string {
                      throw std::runtime_error("inner failure");
                    });
  CHECK(contains(reg.invoke("thrower", "x"), "inner failure"));
}

TEST_CASE("synthetic task wiring: conjunctive score over the agent chain") {
  const SyntheticTask task = make_synthetic_task(2, 6, 7);
  REQUIRE(validate_graph(task.graph).empty());
  CHECK(task.dataset.dev().size() == 6);

  SyntheticQualityBackend backend(derive_seed(7, "downstream"));
  const ToolRegistry tools;
  RolloutOptions opts;
  opts.retry.base_delay_ms = 0;

  auto run_with_skills = [&](double s1, double s2, const Query& q) {
    JointConfiguration config;
    config.config_index = 1;
    config.per_agent["agent1"] = make_synthetic_parameterization("agent1", s1);
    config.per_agent["agent2"] = make_synthetic_parameterization("agent2", s2);
    const Trajectory traj = execute_rollout(task.graph, config, q, backend, tools, opts);
    return task.scorer(traj.final_prediction, q);
  };

  const Query& q = *task.dataset.dev()[0];

  SUBCASE("both agents at skill 1.0 always score 1") {
    CHECK(run_with_skills(1.0, 1.0, q) == 1.0);
  }
  SUBCASE("one zero-skill agent breaks the chain (conjunctive)") {
    // difficulty > 0 for every generated query, so skill 0 fails
    CHECK(run_with_skills(1.0, 0.0, q) == 0.0);
    CHECK(run_with_skills(0.0, 1.0, q) == 0.0);
  }
  SUBCASE("quality oracle exposes the true skill") {
    CHECK(task.quality("agent1", make_synthetic_parameterization("agent1", 0.37)) ==
          doctest::Approx(0.37));
  }
}

TEST_CASE("oracle attribution on the synthetic task is rank-faithful") {
  // one seeded iteration: aggregated oracle credits must rank candidates
  // exactly like their true skills (the seeded partitions keep every
  // adjacent pair ordered, giving Spearman exactly 1)
  const int k = 9;
  const SyntheticTask task = make_synthetic_task(3, 20, 7);
  SyntheticQualityBackend backend(derive_seed(7, "downstream"));
  const ToolRegistry tools;

  std::map<std::string, std::vector<Parameterization>> candidates;
  std::map<std::string, std::vector<double>> skills;
  SeedStream skill_rng(11);
  for (const auto& agent : task.graph.agents) {
    for (int i = 0; i < k; ++i) {
      const double skill = skill_rng.next_unit();
      skills[agent.agent_id].push_back(skill);
      candidates[agent.agent_id].push_back(
          make_synthetic_parameterization(agent.agent_id, skill));
    }
  }
  const auto configs = assemble_joint_configurations(candidates);

  EvalOptions eval_opts;
  eval_opts.run_seed = 7;
  eval_opts.retry.base_delay_ms = 0;
  eval_opts.workers = 4;
  eval_opts.tools = &tools;
  const auto results = evaluate_configurations(configs, task.dataset.dev(), task.graph,
                                               backend, task.scorer, eval_opts);

  OracleAttributer attributer(task.quality);
  std::vector<CreditRecord> records;
  const auto queries = task.dataset.dev();
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    SeedStream rng(derive_seed(7, "partition", 1, qi));
    for (const auto& group : partition_into_groups(k, 3, rng, queries[qi]->query_id)) {
      std::vector<GroupMember> members;
      for (int idx : group.member_config_indices) {
        members.push_back(GroupMember{&results[idx - 1][qi].trajectory, &configs[idx - 1],
                                      results[idx - 1][qi].score});
      }
      const auto outcome =
          attributer.attribute_group(*queries[qi], group, members, task.graph);
      records.insert(records.end(), outcome.records.begin(), outcome.records.end());
    }
  }

  std::vector<std::string> agent_ids;
  for (const auto& a : task.graph.agents) agent_ids.push_back(a.agent_id);
  const auto aggregated = aggregate_credits(records, agent_ids, k);

  for (const auto& agent : agent_ids) {
    std::vector<double> credit_by_config(k);
    for (const auto& agg : aggregated) {
      if (agg.agent_id == agent) credit_by_config[agg.config_index - 1] = agg.value;
    }
    const SpearmanResult rho = spearman(credit_by_config, skills[agent]);
    REQUIRE(rho.value.has_value());
    CHECK(*rho.value == 1.0);
  }
}
