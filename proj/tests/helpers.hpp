#pragma once

#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cantante/backend.hpp"
#include "cantante/types.hpp"

namespace cantante::testing {

/// Responds based on request content instead of call order, so it stays
/// deterministic when parallel branches race. The first entry whose needle
/// appears in the joined prompt wins.
class KeyedBackend : public ChatBackend {
 public:
  explicit KeyedBackend(std::vector<std::pair<std::string, std::string>> routes)
      : routes_(std::move(routes)) {}

  ChatResponse complete(const ChatRequest& request) override {
    std::lock_guard lock(mu_);
    requests_.push_back(request);
    const std::string prompt = request.joined_text();
    for (const auto& [needle, response] : routes_) {
      if (prompt.find(needle) != std::string::npos) {
        return ChatResponse{response, synthetic_usage(request, response)};
      }
    }
    throw BackendError("no route matches request");
  }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::pair<std::string, std::string>> routes_;
  std::vector<ChatRequest> requests_;
};

/// Records every (category, usage) pair that flows through; the independent
/// call log the ledger is audited against.
class CallLogBackend : public ChatBackend {
 public:
  explicit CallLogBackend(ChatBackend& inner) : inner_(inner) {}

  ChatResponse complete(const ChatRequest& request) override {
    ChatResponse response = inner_.complete(request);
    std::lock_guard lock(mu_);
    log_.emplace_back(request.category, response.usage);
    return response;
  }

  std::vector<std::pair<CallCategory, TokenTriple>> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }

  TokenTriple sum() const {
    std::lock_guard lock(mu_);
    TokenTriple total;
    for (const auto& [_, usage] : log_) total += usage;
    return total;
  }

  int calls() const {
    std::lock_guard lock(mu_);
    return static_cast<int>(log_.size());
  }

 private:
  ChatBackend& inner_;
  mutable std::mutex mu_;
  std::vector<std::pair<CallCategory, TokenTriple>> log_;
};

inline AgentSpec make_agent(std::string id, std::vector<std::string> inputs,
                            std::string tag) {
  AgentSpec a;
  a.agent_id = std::move(id);
  a.task_description = "test agent " + a.agent_id;
  a.input_variables = std::move(inputs);
  a.output_tag = std::move(tag);
  return a;
}

inline Parameterization make_param(std::string tmpl) {
  Parameterization p;
  p.prompt_template = std::move(tmpl);
  p.lineage_id = "test";
  return p;
}

/// planner -> executor, entry planner, terminal executor
inline WorkflowGraph make_two_agent_graph() {
  WorkflowGraph g;
  g.agents = {make_agent("planner", {"question"}, "plan"),
              make_agent("executor", {"plan"}, "answer")};
  Edge e;
  e.edge_id = "e1";
  e.from = "planner";
  e.to = "executor";
  e.carries = {{"output", "plan"}};
  g.edges = {e};
  g.entry_agent = "planner";
  g.terminal_agents = {"executor"};
  return g;
}

inline JointConfiguration make_two_agent_config() {
  JointConfiguration c;
  c.config_index = 1;
  c.per_agent["planner"] = make_param("Plan this: {question}\nUse <plan> tags.");
  c.per_agent["executor"] = make_param("Execute: {plan}\nUse <answer> tags.");
  return c;
}

/// planner -> executor -> validator, validator loops back to the executor on
/// a "bug" verdict (cap 3) and falls through to $end otherwise. The executor
/// is the terminal agent whose last output is submitted.
inline WorkflowGraph make_repair_graph(int cap = 3) {
  WorkflowGraph g;
  g.agents = {make_agent("planner", {"question"}, "plan"),
              make_agent("executor", {"plan", "feedback"}, "code"),
              make_agent("validator", {"code"}, "verdict")};
  Edge e1{"e1", "planner", "executor", {{"output", "plan"}}, std::nullopt,
          EdgeKind::Sequential};
  Edge e2{"e2", "executor", "validator", {{"output", "code"}}, std::nullopt,
          EdgeKind::Sequential};
  Edge e3{"e3", "validator", "executor", {{"output", "feedback"}},
          EdgeCondition{EdgeCondition::Kind::Equals, "", "bug"}, EdgeKind::LoopBack};
  Edge e4{"e4", "validator", std::string(kEndTarget), {},
          EdgeCondition{EdgeCondition::Kind::Default, "", ""}, EdgeKind::Conditional};
  g.edges = {e1, e2, e3, e4};
  g.entry_agent = "planner";
  g.terminal_agents = {"executor"};
  g.loop_caps = {{"e3", cap}};
  return g;
}

inline JointConfiguration make_repair_config() {
  JointConfiguration c;
  c.config_index = 1;
  c.per_agent["planner"] = make_param("Plan {question}; answer in <plan> tags.");
  c.per_agent["executor"] =
      make_param("Implement {plan} considering {feedback}; answer in <code> tags.");
  c.per_agent["validator"] = make_param("Check {code}; answer in <verdict> tags.");
  return c;
}

inline Query make_repair_query() {
  Query q;
  q.query_id = "q1";
  q.input_payload = {{"question", "sort a list"}, {"feedback", "(none)"}};
  q.ground_truth = "";
  return q;
}

/// exec1 fans out to exec2 and exec3 (parallel branches carrying the original
/// question); all three feed the consensus join in declared order.
inline WorkflowGraph make_ensemble_graph() {
  WorkflowGraph g;
  g.agents = {make_agent("exec1", {"question"}, "answer"),
              make_agent("exec2", {"question"}, "answer"),
              make_agent("exec3", {"question"}, "answer"),
              make_agent("consensus", {"answer_1", "answer_2", "answer_3"}, "final")};
  Edge b1{"b1", "exec1", "exec2", {{"question", "question"}}, std::nullopt,
          EdgeKind::ParallelBranch};
  Edge b2{"b2", "exec1", "exec3", {{"question", "question"}}, std::nullopt,
          EdgeKind::ParallelBranch};
  Edge f1{"f1", "exec1", "consensus", {{"output", "answer_1"}}, std::nullopt,
          EdgeKind::Sequential};
  Edge j2{"j2", "exec2", "consensus", {{"output", "answer_2"}}, std::nullopt,
          EdgeKind::Sequential};
  Edge j3{"j3", "exec3", "consensus", {{"output", "answer_3"}}, std::nullopt,
          EdgeKind::Sequential};
  g.edges = {b1, b2, f1, j2, j3};
  g.entry_agent = "exec1";
  g.terminal_agents = {"consensus"};
  return g;
}

inline JointConfiguration make_ensemble_config() {
  JointConfiguration c;
  c.config_index = 1;
  c.per_agent["exec1"] = make_param("exec1 solves {question}; answer in <answer> tags.");
  c.per_agent["exec2"] = make_param("exec2 solves {question}; answer in <answer> tags.");
  c.per_agent["exec3"] = make_param("exec3 solves {question}; answer in <answer> tags.");
  c.per_agent["consensus"] =
      make_param("Combine {answer_1} | {answer_2} | {answer_3}; answer in <final> tags.");
  return c;
}

inline std::string trajectory_fingerprint(const Trajectory& t) {
  std::ostringstream os;
  os << t.query_id << '\x1f' << t.config_index << '\x1f' << t.final_prediction << '\x1f'
     << t.system_score << '\x1f' << t.failed << '\x1f' << t.token_usage.input << ':'
     << t.token_usage.output << ':' << t.token_usage.total;
  for (const auto& rec : t.invocations) {
    os << '\x1e' << rec.agent_id << '\x1f' << rec.invocation_ordinal << '\x1f'
       << rec.rendered_prompt << '\x1f' << rec.raw_output << '\x1f' << rec.extracted_output
       << '\x1f' << rec.tokens.input << ':' << rec.tokens.output;
    for (const auto& call : rec.tool_calls) {
      os << '\x1d' << call.tool_id << '\x1f' << call.input << '\x1f' << call.output;
    }
  }
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline bool contains(const std::string& haystack, std::string_view needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace cantante::testing
