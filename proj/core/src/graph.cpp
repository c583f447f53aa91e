#include "cantante/graph.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cantante {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw std::runtime_error("graph file: unknown key '" + key + "' in " + where);
    }
  }
}

AgentSpec parse_agent(const json& j) {
  if (!j.is_object()) throw std::runtime_error("graph file: agent entry must be an object");
  reject_unknown_keys(j,
                      {"id", "task_description", "input_variables", "output_tag", "tools",
                       "temperature", "max_output_tokens"},
                      "agent");
  AgentSpec a;
  a.agent_id = j.at("id").get<std::string>();
  a.task_description = j.value("task_description", std::string{});
  a.input_variables = j.at("input_variables").get<std::vector<std::string>>();
  a.output_tag = j.at("output_tag").get<std::string>();
  if (j.contains("tools")) a.tool_ids = j.at("tools").get<std::vector<std::string>>();
  if (j.contains("temperature")) a.generation.temperature = j.at("temperature").get<double>();
  if (j.contains("max_output_tokens")) {
    a.generation.max_output_tokens = j.at("max_output_tokens").get<int>();
  }
  return a;
}

EdgeCondition parse_condition(const json& j, const std::string& edge_id) {
  if (!j.is_object()) {
    throw std::runtime_error("graph file: condition of edge '" + edge_id +
                             "' must be an object");
  }
  reject_unknown_keys(j, {"equals", "matches", "default", "field"},
                      "condition of edge '" + edge_id + "'");
  EdgeCondition c;
  c.field = j.value("field", std::string{});
  const int forms = int(j.contains("equals")) + int(j.contains("matches")) +
                    int(j.contains("default"));
  if (forms != 1) {
    throw std::runtime_error("graph file: condition of edge '" + edge_id +
                             "' must have exactly one of equals/matches/default");
  }
  if (j.contains("equals")) {
    c.kind = EdgeCondition::Kind::Equals;
    c.value = j.at("equals").get<std::string>();
  } else if (j.contains("matches")) {
    c.kind = EdgeCondition::Kind::Matches;
    c.value = j.at("matches").get<std::string>();
  } else {
    if (!j.at("default").get<bool>()) {
      throw std::runtime_error("graph file: condition 'default' of edge '" + edge_id +
                               "' must be true");
    }
    c.kind = EdgeCondition::Kind::Default;
  }
  return c;
}

Edge parse_edge(const json& j) {
  if (!j.is_object()) throw std::runtime_error("graph file: edge entry must be an object");
  reject_unknown_keys(j, {"id", "from", "to", "kind", "carries", "condition"}, "edge");
  Edge e;
  e.edge_id = j.at("id").get<std::string>();
  e.from = j.at("from").get<std::string>();
  e.to = j.at("to").get<std::string>();
  if (j.contains("kind")) e.kind = edge_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("carries")) {
    const json& c = j.at("carries");
    if (!c.is_object()) {
      throw std::runtime_error("graph file: carries of edge '" + e.edge_id +
                               "' must be an object");
    }
    for (const auto& [src, dst] : c.items()) {
      e.carries.emplace_back(src, dst.get<std::string>());
    }
  }
  if (j.contains("condition")) e.condition = parse_condition(j.at("condition"), e.edge_id);
  return e;
}

}  // namespace

WorkflowGraph graph_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw std::runtime_error("graph file: top level must be an object");
  reject_unknown_keys(doc, {"agents", "edges", "entry", "terminals", "loop_caps"},
                      "top level");
  WorkflowGraph g;
  for (const json& a : doc.at("agents")) g.agents.push_back(parse_agent(a));
  if (doc.contains("edges")) {
    for (const json& e : doc.at("edges")) g.edges.push_back(parse_edge(e));
  }
  g.entry_agent = doc.at("entry").get<std::string>();
  g.terminal_agents = doc.at("terminals").get<std::vector<std::string>>();
  if (doc.contains("loop_caps")) {
    for (const auto& [edge_id, cap] : doc.at("loop_caps").items()) {
      g.loop_caps[edge_id] = cap.get<int>();
    }
  }
  return g;
}

WorkflowGraph load_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("graph file '" + path + "': " + e.what());
  }
  return graph_from_json(doc);
}

nlohmann::json graph_to_json(const WorkflowGraph& graph) {
  json doc;
  doc["agents"] = json::array();
  for (const auto& a : graph.agents) {
    json ja{{"id", a.agent_id},
            {"task_description", a.task_description},
            {"input_variables", a.input_variables},
            {"output_tag", a.output_tag},
            {"temperature", a.generation.temperature},
            {"max_output_tokens", a.generation.max_output_tokens}};
    if (!a.tool_ids.empty()) ja["tools"] = a.tool_ids;
    doc["agents"].push_back(std::move(ja));
  }
  doc["edges"] = json::array();
  for (const auto& e : graph.edges) {
    json je{{"id", e.edge_id},
            {"from", e.from},
            {"to", e.to},
            {"kind", std::string(to_string(e.kind))}};
    if (!e.carries.empty()) {
      json c = json::object();
      for (const auto& [src, dst] : e.carries) c[src] = dst;
      je["carries"] = std::move(c);
    }
    if (e.condition) {
      json jc;
      switch (e.condition->kind) {
        case EdgeCondition::Kind::Equals: jc["equals"] = e.condition->value; break;
        case EdgeCondition::Kind::Matches: jc["matches"] = e.condition->value; break;
        case EdgeCondition::Kind::Default: jc["default"] = true; break;
      }
      if (!e.condition->field.empty()) jc["field"] = e.condition->field;
      je["condition"] = std::move(jc);
    }
    doc["edges"].push_back(std::move(je));
  }
  doc["entry"] = graph.entry_agent;
  doc["terminals"] = graph.terminal_agents;
  doc["loop_caps"] = json::object();
  for (const auto& [edge_id, cap] : graph.loop_caps) doc["loop_caps"][edge_id] = cap;
  return doc;
}

}  // namespace cantante
