#include "cantante/types.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace cantante {

std::string_view to_string(PromptOrigin o) {
  switch (o) {
    case PromptOrigin::Initial: return "initial";
    case PromptOrigin::Mutated: return "mutated";
    case PromptOrigin::Crossover: return "crossover";
  }
  return "initial";
}

PromptOrigin prompt_origin_from_string(std::string_view s) {
  if (s == "initial") return PromptOrigin::Initial;
  if (s == "mutated") return PromptOrigin::Mutated;
  if (s == "crossover") return PromptOrigin::Crossover;
  throw std::invalid_argument("unknown prompt origin: " + std::string(s));
}

std::string_view to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::Sequential: return "sequential";
    case EdgeKind::Conditional: return "conditional";
    case EdgeKind::ParallelBranch: return "parallel-branch";
    case EdgeKind::LoopBack: return "loop-back";
  }
  return "sequential";
}

EdgeKind edge_kind_from_string(std::string_view s) {
  if (s == "sequential") return EdgeKind::Sequential;
  if (s == "conditional") return EdgeKind::Conditional;
  if (s == "parallel-branch") return EdgeKind::ParallelBranch;
  if (s == "loop-back") return EdgeKind::LoopBack;
  throw std::invalid_argument("unknown edge kind: " + std::string(s));
}

std::string_view to_string(AttributionStatus s) {
  switch (s) {
    case AttributionStatus::Attributed: return "attributed";
    case AttributionStatus::DefaultedUnexecuted: return "defaulted-unexecuted";
    case AttributionStatus::ParseFailed: return "parse-failed";
  }
  return "attributed";
}

AttributionStatus attribution_status_from_string(std::string_view s) {
  if (s == "attributed") return AttributionStatus::Attributed;
  if (s == "defaulted-unexecuted") return AttributionStatus::DefaultedUnexecuted;
  if (s == "parse-failed") return AttributionStatus::ParseFailed;
  throw std::invalid_argument("unknown attribution status: " + std::string(s));
}

const AgentSpec* WorkflowGraph::find_agent(std::string_view agent_id) const {
  for (const auto& a : agents) {
    if (a.agent_id == agent_id) return &a;
  }
  return nullptr;
}

const Edge* WorkflowGraph::find_edge(std::string_view edge_id) const {
  for (const auto& e : edges) {
    if (e.edge_id == edge_id) return &e;
  }
  return nullptr;
}

std::vector<const Edge*> WorkflowGraph::edges_from(std::string_view agent_id) const {
  std::vector<const Edge*> out;
  for (const auto& e : edges) {
    if (e.from == agent_id) out.push_back(&e);
  }
  return out;
}

bool WorkflowGraph::is_terminal(std::string_view agent_id) const {
  return std::find(terminal_agents.begin(), terminal_agents.end(), agent_id) !=
         terminal_agents.end();
}

std::string Trajectory::final_output_of(std::string_view agent_id) const {
  const InvocationRecord* last = nullptr;
  for (const auto& rec : invocations) {
    if (rec.agent_id == agent_id) last = &rec;
  }
  return last ? last->extracted_output : std::string(kNotExecutedMarker);
}

namespace {

bool is_placeholder_char(char c, bool first) {
  if (first) return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_';
}

}  // namespace

std::vector<std::string> extract_placeholders(std::string_view tmpl) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] != '{') continue;
    if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {  // escaped literal brace
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tmpl.size() && tmpl[j] != '}' && tmpl[j] != '{') ++j;
    if (j >= tmpl.size() || tmpl[j] != '}') continue;
    std::string_view name = tmpl.substr(i + 1, j - i - 1);
    bool ok = !name.empty();
    for (std::size_t k = 0; ok && k < name.size(); ++k) {
      ok = is_placeholder_char(name[k], k == 0);
    }
    if (ok) names.emplace_back(name);
    i = j;
  }
  return names;
}

std::vector<Violation> validate_parameterization(const AgentSpec& spec,
                                                 const Parameterization& param) {
  std::vector<Violation> report;
  const auto found = extract_placeholders(param.prompt_template);
  for (const auto& var : spec.input_variables) {
    if (std::find(found.begin(), found.end(), var) == found.end()) {
      report.push_back({spec.agent_id, "template missing placeholder {" + var + "}"});
    }
  }
  for (const auto& name : found) {
    if (std::find(spec.input_variables.begin(), spec.input_variables.end(), name) ==
        spec.input_variables.end()) {
      report.push_back(
          {spec.agent_id, "template references undeclared variable {" + name + "}"});
    }
  }
  const std::string tag_literal = "<" + spec.output_tag + ">";
  if (param.prompt_template.find(tag_literal) == std::string::npos) {
    report.push_back({spec.agent_id, "template does not mention output tag " + tag_literal});
  }
  return report;
}

std::optional<ParallelGroup> resolve_parallel_group(const WorkflowGraph& graph,
                                                    std::string_view source,
                                                    std::string* error) {
  auto fail = [&](std::string msg) -> std::optional<ParallelGroup> {
    if (error) *error = std::move(msg);
    return std::nullopt;
  };

  ParallelGroup group;
  for (const Edge* e : graph.edges_from(source)) {
    if (e->kind == EdgeKind::ParallelBranch) {
      group.branch_edges.push_back(e);
    } else {
      group.feed_edges.push_back(e);
    }
  }
  if (group.branch_edges.empty()) {
    return fail("agent '" + std::string(source) + "' has no parallel-branch edges");
  }

  // Walk each branch: chains of agents with exactly one plain out-edge. The
  // walk may run past the join; the join is the earliest agent common to all
  // chains.
  std::vector<std::vector<std::string>> walks;
  for (const Edge* b : group.branch_edges) {
    if (b->condition) {
      return fail("parallel-branch edge '" + b->edge_id + "' must be unconditional");
    }
    if (b->to == kEndTarget || !graph.find_agent(b->to)) {
      return fail("parallel-branch edge '" + b->edge_id + "' does not target an agent");
    }
    std::vector<std::string> walk;
    std::set<std::string> guard{std::string(b->to)};
    std::string cur = b->to;
    while (true) {
      const auto out = graph.edges_from(cur);
      if (out.size() != 1) break;
      const Edge* e = out[0];
      if (e->condition || e->kind == EdgeKind::ParallelBranch ||
          e->kind == EdgeKind::LoopBack || e->to == kEndTarget || !graph.find_agent(e->to)) {
        break;
      }
      if (!guard.insert(e->to).second) break;  // cycle inside a branch
      walk.push_back(e->to);
      cur = e->to;
    }
    if (walk.empty()) {
      return fail("parallel branch '" + b->edge_id + "' from '" + std::string(source) +
                  "' never reaches a join agent");
    }
    walks.push_back(std::move(walk));
  }

  std::string join;
  for (const auto& cand : walks[0]) {
    bool in_all = true;
    for (std::size_t i = 1; i < walks.size(); ++i) {
      if (std::find(walks[i].begin(), walks[i].end(), cand) == walks[i].end()) {
        in_all = false;
        break;
      }
    }
    if (in_all) {
      join = cand;
      break;
    }
  }
  if (join.empty()) {
    return fail("parallel fan-out from '" + std::string(source) +
                "' does not converge on one join agent");
  }
  group.join = join;
  for (std::size_t i = 0; i < walks.size(); ++i) {
    std::vector<std::string> chain{group.branch_edges[i]->to};
    for (const auto& a : walks[i]) {
      if (a == join) break;
      chain.push_back(a);
    }
    group.chains.push_back(std::move(chain));
  }
  for (const Edge* e : group.feed_edges) {
    if (e->to != join) {
      return fail("non-branch edge '" + e->edge_id +
                  "' from fan-out source must feed the join '" + join + "'");
    }
    if (e->condition) {
      return fail("join feed edge '" + e->edge_id + "' must be unconditional");
    }
  }
  return group;
}

namespace {

void check_agents(const WorkflowGraph& g, std::vector<Violation>& report) {
  std::set<std::string> seen;
  for (const auto& a : g.agents) {
    if (!seen.insert(a.agent_id).second) {
      report.push_back({a.agent_id, "duplicate agent_id"});
    }
    if (a.agent_id.empty()) {
      report.push_back({"<agent>", "empty agent_id"});
    }
    if (a.input_variables.empty()) {
      report.push_back({a.agent_id, "input_variables must be non-empty"});
    }
    if (a.output_tag.empty()) {
      report.push_back({a.agent_id, "output_tag must be non-empty"});
    }
    if (a.generation.temperature < 0) {
      report.push_back({a.agent_id, "temperature must be >= 0"});
    }
    if (a.generation.max_output_tokens < 1) {
      report.push_back({a.agent_id, "max_output_tokens must be >= 1"});
    }
  }
}

void check_edges(const WorkflowGraph& g, std::vector<Violation>& report) {
  std::set<std::string> ids;
  for (const auto& e : g.edges) {
    if (!ids.insert(e.edge_id).second) {
      report.push_back({e.edge_id, "duplicate edge_id"});
    }
    if (!g.find_agent(e.from)) {
      report.push_back({e.edge_id, "edge source '" + e.from + "' is not an agent"});
    }
    if (e.to != kEndTarget && !g.find_agent(e.to)) {
      report.push_back({e.edge_id, "edge target '" + e.to + "' is not an agent"});
    }
    if (e.kind == EdgeKind::LoopBack && !g.loop_caps.count(e.edge_id)) {
      report.push_back({e.edge_id, "loop-back edge has no loop cap"});
    }
    if (e.to != kEndTarget) {
      if (const AgentSpec* target = g.find_agent(e.to)) {
        for (const auto& [src, dst] : e.carries) {
          if (std::find(target->input_variables.begin(), target->input_variables.end(),
                        dst) == target->input_variables.end()) {
            report.push_back({e.edge_id, "carried variable '" + dst +
                                             "' is not an input variable of '" + e.to +
                                             "'"});
          }
        }
      }
    }
  }
  for (const auto& [edge_id, cap] : g.loop_caps) {
    if (!g.find_edge(edge_id)) {
      report.push_back({edge_id, "loop cap references unknown edge"});
    }
    if (cap < 1) {
      report.push_back({edge_id, "loop cap must be positive"});
    }
  }
}

void check_entry_and_terminals(const WorkflowGraph& g, std::vector<Violation>& report) {
  if (!g.find_agent(g.entry_agent)) {
    report.push_back({g.entry_agent.empty() ? "<entry>" : g.entry_agent,
                      "entry agent does not exist"});
  }
  if (g.terminal_agents.empty()) {
    report.push_back({"<terminals>", "terminal agent set must be non-empty"});
  }
  std::set<std::string> seen;
  for (const auto& t : g.terminal_agents) {
    if (!g.find_agent(t)) {
      report.push_back({t, "terminal agent does not exist"});
    }
    if (!seen.insert(t).second) {
      report.push_back({t, "duplicate terminal agent"});
    }
  }
}

void check_reachability(const WorkflowGraph& g, std::vector<Violation>& report) {
  if (!g.find_agent(g.entry_agent)) return;
  std::set<std::string> visited;
  std::vector<std::string> stack{g.entry_agent};
  while (!stack.empty()) {
    std::string cur = stack.back();
    stack.pop_back();
    if (!visited.insert(cur).second) continue;
    for (const Edge* e : g.edges_from(cur)) {
      if (e->to != kEndTarget) stack.push_back(e->to);
    }
  }
  for (const auto& a : g.agents) {
    if (!visited.count(a.agent_id)) {
      report.push_back({a.agent_id, "agent unreachable from entry"});
    }
  }
}

// A cycle avoiding every capped edge could never terminate, so the graph
// minus capped edges must be acyclic.
void check_uncapped_cycles(const WorkflowGraph& g, std::vector<Violation>& report) {
  enum class Mark { None, InProgress, Done };
  std::map<std::string, Mark> marks;
  for (const auto& a : g.agents) marks[a.agent_id] = Mark::None;

  auto dfs = [&](auto&& self, const std::string& node) -> std::string {
    marks[node] = Mark::InProgress;
    for (const Edge* e : g.edges_from(node)) {
      if (e->to == kEndTarget) continue;
      if (g.loop_caps.count(e->edge_id)) continue;
      if (!g.find_agent(e->to)) continue;
      if (marks[e->to] == Mark::InProgress) return e->to;
      if (marks[e->to] == Mark::None) {
        if (auto hit = self(self, e->to); !hit.empty()) return hit;
      }
    }
    marks[node] = Mark::Done;
    return "";
  };
  for (const auto& a : g.agents) {
    if (marks[a.agent_id] == Mark::None) {
      if (auto hit = dfs(dfs, a.agent_id); !hit.empty()) {
        report.push_back({hit, "uncapped cycle through agent '" + hit + "'"});
        return;
      }
    }
  }
}

void check_routing(const WorkflowGraph& g, std::vector<Violation>& report) {
  for (const auto& a : g.agents) {
    const auto out = g.edges_from(a.agent_id);
    bool any_condition = false;
    bool any_branch = false;
    for (const Edge* e : out) {
      if (e->condition) any_condition = true;
      if (e->kind == EdgeKind::ParallelBranch) any_branch = true;
    }

    if (any_branch) {
      if (any_condition) {
        report.push_back({a.agent_id, "conditional routing cannot mix with parallel fan-out"});
        continue;
      }
      std::string err;
      if (!resolve_parallel_group(g, a.agent_id, &err)) {
        report.push_back({a.agent_id, err});
      }
      continue;
    }

    if (any_condition) {
      int defaults = 0;
      std::set<std::string> equals_literals;
      for (const Edge* e : out) {
        if (!e->condition) {
          report.push_back({e->edge_id, "edge in a conditional family lacks a condition"});
          continue;
        }
        switch (e->condition->kind) {
          case EdgeCondition::Kind::Default:
            ++defaults;
            break;
          case EdgeCondition::Kind::Equals:
            if (!equals_literals
                     .insert(e->condition->field + "\x1f" + e->condition->value)
                     .second) {
              report.push_back(
                  {e->edge_id, "overlapping equals conditions from '" + a.agent_id + "'"});
            }
            break;
          case EdgeCondition::Kind::Matches:
            break;
        }
      }
      if (defaults == 0) {
        report.push_back({a.agent_id,
                          "non-exhaustive conditions: conditional edges from '" +
                              a.agent_id + "' declare no default branch"});
      } else if (defaults > 1) {
        report.push_back({a.agent_id, "multiple default branches from '" + a.agent_id + "'"});
      }
      continue;
    }

    int plain = 0;
    for (const Edge* e : out) {
      (void)e;
      ++plain;
    }
    if (plain > 1) {
      report.push_back({a.agent_id, "ambiguous routing: multiple unconditional edges from '" +
                                        a.agent_id + "'"});
    }
  }
}

}  // namespace

std::vector<Violation> validate_graph(const WorkflowGraph& graph) {
  std::vector<Violation> report;
  check_agents(graph, report);
  check_edges(graph, report);
  check_entry_and_terminals(graph, report);
  check_reachability(graph, report);
  check_uncapped_cycles(graph, report);
  check_routing(graph, report);
  return report;
}

std::vector<JointConfiguration> assemble_joint_configurations(
    const std::map<std::string, std::vector<Parameterization>>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("assemble_joint_configurations: no candidates");
  }
  const std::size_t k = candidates.begin()->second.size();
  for (const auto& [agent, list] : candidates) {
    if (list.size() != k) {
      throw std::invalid_argument(
          "assemble_joint_configurations: agent '" + agent + "' contributes " +
          std::to_string(list.size()) + " candidates, expected " + std::to_string(k));
    }
  }
  if (k == 0) {
    throw std::invalid_argument("assemble_joint_configurations: zero candidates per agent");
  }
  std::vector<JointConfiguration> configs(k);
  for (std::size_t i = 0; i < k; ++i) {
    configs[i].config_index = static_cast<int>(i) + 1;
    for (const auto& [agent, list] : candidates) {
      configs[i].per_agent[agent] = list[i];
    }
  }
  return configs;
}

}  // namespace cantante
