#include "doctest.h"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "cantante/graph.hpp"
#include "cantante/rng.hpp"
#include "cantante/types.hpp"
#include "helpers.hpp"

using namespace cantante;
using namespace cantante::testing;

TEST_CASE("linear two-agent graph validates cleanly") {
  const WorkflowGraph g = make_two_agent_graph();
  CHECK(validate_graph(g).empty());
}

TEST_CASE("graph validation is idempotent and side-effect free") {
  const WorkflowGraph g = make_repair_graph();
  const auto first = validate_graph(g);
  const auto second = validate_graph(g);
  CHECK(first == second);
  CHECK(first.empty());
}

TEST_CASE("cycle without a loop cap is reported") {
  WorkflowGraph g = make_two_agent_graph();
  Edge back{"e2", "executor", "planner", {{"output", "question"}}, std::nullopt,
            EdgeKind::Sequential};
  g.edges.push_back(back);
  const auto report = validate_graph(g);
  REQUIRE_FALSE(report.empty());
  bool found = false;
  for (const auto& v : report) {
    if (v.message.find("uncapped cycle") != std::string::npos) found = true;
  }
  CHECK(found);
}

TEST_CASE("capped cycle passes the cycle check") {
  const WorkflowGraph g = make_repair_graph();
  for (const auto& v : validate_graph(g)) {
    CHECK(v.message.find("uncapped cycle") == std::string::npos);
  }
}

TEST_CASE("conditional family without a default branch is non-exhaustive") {
  WorkflowGraph g = make_repair_graph();
  // drop the default edge e4
  g.edges.erase(std::remove_if(g.edges.begin(), g.edges.end(),
                               [](const Edge& e) { return e.edge_id == "e4"; }),
                g.edges.end());
  const auto report = validate_graph(g);
  bool found = false;
  for (const auto& v : report) {
    if (v.message.find("non-exhaustive conditions") != std::string::npos) found = true;
  }
  CHECK(found);
}

TEST_CASE("agent field invariants are checked") {
  WorkflowGraph g = make_two_agent_graph();
  g.agents[0].input_variables.clear();
  g.agents[1].output_tag.clear();
  g.agents[1].generation.temperature = -0.5;
  g.agents[1].generation.max_output_tokens = 0;
  const auto report = validate_graph(g);
  int hits = 0;
  for (const auto& v : report) {
    if (v.message.find("input_variables") != std::string::npos) ++hits;
    if (v.message.find("output_tag") != std::string::npos) ++hits;
    if (v.message.find("temperature") != std::string::npos) ++hits;
    if (v.message.find("max_output_tokens") != std::string::npos) ++hits;
  }
  CHECK(hits == 4);
}

TEST_CASE("duplicate agent ids and unreachable agents are reported") {
  WorkflowGraph g = make_two_agent_graph();
  g.agents.push_back(make_agent("planner", {"x"}, "t"));
  const auto report = validate_graph(g);
  bool dup = false;
  for (const auto& v : report) {
    if (v.message.find("duplicate agent_id") != std::string::npos) dup = true;
  }
  CHECK(dup);

  WorkflowGraph g2 = make_two_agent_graph();
  g2.agents.push_back(make_agent("orphan", {"x"}, "t"));
  bool unreachable = false;
  for (const auto& v : validate_graph(g2)) {
    if (v.where == "orphan" && v.message.find("unreachable") != std::string::npos) {
      unreachable = true;
    }
  }
  CHECK(unreachable);
}

TEST_CASE("loop-back edge must reference a loop cap") {
  WorkflowGraph g = make_repair_graph();
  g.loop_caps.clear();
  bool found = false;
  for (const auto& v : validate_graph(g)) {
    if (v.where == "e3" && v.message.find("no loop cap") != std::string::npos) found = true;
  }
  CHECK(found);
}

TEST_CASE("ambiguous unconditional routing is reported") {
  WorkflowGraph g = make_two_agent_graph();
  Edge extra{"e9", "planner", "executor", {{"output", "plan"}}, std::nullopt,
             EdgeKind::Sequential};
  g.edges.push_back(extra);
  bool found = false;
  for (const auto& v : validate_graph(g)) {
    if (v.message.find("ambiguous routing") != std::string::npos) found = true;
  }
  CHECK(found);
}

TEST_CASE("parallel fan-out must converge on one join") {
  WorkflowGraph g = make_ensemble_graph();
  CHECK(validate_graph(g).empty());

  // retarget one branch tail away from the join
  for (auto& e : g.edges) {
    if (e.edge_id == "j3") e.to = std::string(kEndTarget);
  }
  CHECK_FALSE(validate_graph(g).empty());
}

TEST_CASE("parameterization invariants: placeholders and tag literal") {
  const AgentSpec spec = make_agent("planner", {"question", "context"}, "plan");

  SUBCASE("valid template") {
    const auto p = make_param("Answer {question} using {context}; use <plan> tags.");
    CHECK(validate_parameterization(spec, p).empty());
  }
  SUBCASE("missing placeholder") {
    const auto p = make_param("Answer {question}; use <plan> tags.");
    const auto report = validate_parameterization(spec, p);
    REQUIRE(report.size() == 1);
    CHECK(report[0].message.find("{context}") != std::string::npos);
  }
  SUBCASE("duplicated placeholder is fine (once or more)") {
    const auto p =
        make_param("{question} and again {question} with {context}; use <plan> tags.");
    CHECK(validate_parameterization(spec, p).empty());
  }
  SUBCASE("missing tag literal") {
    const auto p = make_param("Answer {question} using {context}.");
    const auto report = validate_parameterization(spec, p);
    REQUIRE(report.size() == 1);
    CHECK(report[0].message.find("<plan>") != std::string::npos);
  }
  SUBCASE("undeclared placeholder is flagged") {
    const auto p = make_param("{question} {context} {mystery}; use <plan> tags.");
    const auto report = validate_parameterization(spec, p);
    REQUIRE(report.size() == 1);
    CHECK(report[0].message.find("{mystery}") != std::string::npos);
  }
}

TEST_CASE("extract_placeholders handles escapes and non-identifiers") {
  const auto names = extract_placeholders("{{literal}} {a_1} {not a name} {b}");
  REQUIRE(names.size() == 2);
  CHECK(names[0] == "a_1");
  CHECK(names[1] == "b");
}

TEST_CASE("assemble_joint_configurations pairs by index") {
  std::map<std::string, std::vector<Parameterization>> candidates;
  for (int i = 1; i <= 3; ++i) {
    candidates["a"].push_back(make_param("a" + std::to_string(i) + " {x} <t>"));
    candidates["b"].push_back(make_param("b" + std::to_string(i) + " {x} <t>"));
  }
  const auto configs = assemble_joint_configurations(candidates);
  REQUIRE(configs.size() == 3);
  CHECK(configs[1].config_index == 2);
  CHECK(configs[1].per_agent.at("a").prompt_template == "a2 {x} <t>");
  CHECK(configs[1].per_agent.at("b").prompt_template == "b2 {x} <t>");
}

TEST_CASE("assemble with K=9 returns 9 configurations") {
  std::map<std::string, std::vector<Parameterization>> candidates;
  for (int i = 0; i < 9; ++i) {
    candidates["a"].push_back(make_param("pa" + std::to_string(i)));
    candidates["b"].push_back(make_param("pb" + std::to_string(i)));
  }
  CHECK(assemble_joint_configurations(candidates).size() == 9);
}

TEST_CASE("assemble rejects mismatched candidate counts") {
  std::map<std::string, std::vector<Parameterization>> candidates;
  for (int i = 0; i < 3; ++i) candidates["a"].push_back(make_param("p"));
  for (int i = 0; i < 4; ++i) candidates["b"].push_back(make_param("p"));
  CHECK_THROWS_AS(assemble_joint_configurations(candidates), std::invalid_argument);
}

TEST_CASE("assemble property: candidate i appears exactly in configuration i") {
  SeedStream rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_below(9));
    const int n_agents = 2 + static_cast<int>(rng.next_below(4));
    std::map<std::string, std::vector<Parameterization>> candidates;
    for (int a = 0; a < n_agents; ++a) {
      for (int i = 0; i < k; ++i) {
        candidates["agent" + std::to_string(a)].push_back(
            make_param("a" + std::to_string(a) + "-c" + std::to_string(i)));
      }
    }
    const auto configs = assemble_joint_configurations(candidates);
    REQUIRE(static_cast<int>(configs.size()) == k);
    for (int i = 0; i < k; ++i) {
      for (int a = 0; a < n_agents; ++a) {
        CHECK(configs[i].per_agent.at("agent" + std::to_string(a)).prompt_template ==
              "a" + std::to_string(a) + "-c" + std::to_string(i));
      }
    }
  }
}

TEST_CASE("graph file loader round-trips and rejects unknown keys") {
  const WorkflowGraph g = make_repair_graph();
  const nlohmann::json doc = graph_to_json(g);
  const WorkflowGraph loaded = graph_from_json(doc);
  CHECK(loaded.agents.size() == g.agents.size());
  CHECK(loaded.edges.size() == g.edges.size());
  CHECK(loaded.entry_agent == g.entry_agent);
  CHECK(loaded.loop_caps.at("e3") == 3);
  CHECK(validate_graph(loaded).empty());

  nlohmann::json bad = doc;
  bad["surprise"] = 1;
  CHECK_THROWS_WITH_AS(graph_from_json(bad),
                       doctest::Contains("unknown key 'surprise'"), std::runtime_error);

  nlohmann::json bad_agent = doc;
  bad_agent["agents"][0]["turbo"] = true;
  CHECK_THROWS_AS(graph_from_json(bad_agent), std::runtime_error);
}

TEST_CASE("TokenTriple arithmetic keeps total = input + output") {
  TokenTriple a = TokenTriple::of(3, 4);
  CHECK(a.total == 7);
  a += TokenTriple::of(1, 2);
  CHECK(a.input == 4);
  CHECK(a.output == 6);
  CHECK(a.total == 10);
}
