#include "cantante/attribution.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cantante/csv.hpp"

namespace cantante {

std::vector<ComparisonGroup> partition_into_groups(int k, int g, SeedStream& rng,
                                                   const std::string& query_id) {
  if (k < 2) throw std::invalid_argument("partition_into_groups: K must be >= 2");
  if (g < 2) throw std::invalid_argument("partition_into_groups: g must be >= 2");

  std::vector<int> indices(k);
  std::iota(indices.begin(), indices.end(), 1);
  deterministic_shuffle(indices, rng);

  // floor(k/g) groups; the remainder is distributed one member per group from
  // the first group on. g > k collapses to a single group of size k.
  std::vector<int> sizes;
  if (k < g) {
    sizes.push_back(k);
  } else {
    const int n_groups = k / g;
    const int extra = k - n_groups * g;
    for (int i = 0; i < n_groups; ++i) {
      sizes.push_back(g + (i < extra ? 1 : 0));
    }
  }

  std::vector<ComparisonGroup> groups;
  int at = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    ComparisonGroup grp;
    grp.query_id = query_id;
    grp.group_id = (query_id.empty() ? std::string{} : query_id + "/") + "g" +
                   std::to_string(i + 1);
    grp.member_config_indices.assign(indices.begin() + at, indices.begin() + at + sizes[i]);
    at += sizes[i];
    groups.push_back(std::move(grp));
  }
  return groups;
}

namespace {

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
  }
  return text;
}

std::string render_query(const Query& query) {
  std::string out = "Query " + query.query_id + ":\n";
  for (const auto& [var, value] : query.input_payload) {
    if (var.rfind("__", 0) == 0) continue;  // reserved keys are not shown
    out += var + ": " + value + "\n";
  }
  return out;
}

double clamp_credit(double v) { return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

ChatRequest build_attribution_request(const Query& query, const ComparisonGroup& group,
                                      const std::vector<GroupMember>& members,
                                      const WorkflowGraph& graph,
                                      std::string_view instruction_template) {
  std::string agent_list;
  for (const auto& a : graph.agents) {
    if (!agent_list.empty()) agent_list += ", ";
    agent_list += a.agent_id;
  }

  std::string rollouts = render_query(query);
  for (std::size_t m = 0; m < members.size(); ++m) {
    const int config_index = group.member_config_indices[m];
    const GroupMember& member = members[m];
    rollouts += "--- configuration " + std::to_string(config_index) + " ---\n";
    rollouts += "agents: " + agent_list + "\n";
    rollouts += "system score=" + format_double(member.score) + "\n";
    for (const auto& agent : graph.agents) {
      // final produced output: the highest-ordinal invocation of the agent
      rollouts += "output of " + agent.agent_id + ":\n";
      rollouts += member.trajectory->final_output_of(agent.agent_id) + "\n";
    }
  }

  std::string text = replace_all(std::string(instruction_template), "{n_configs}",
                                 std::to_string(members.size()));
  text = replace_all(std::move(text), "{rollouts}", rollouts);

  ChatRequest request;
  request.category = CallCategory::Attribution;
  request.messages.push_back({MessageRole::User, std::move(text)});
  return request;
}

AttributionOutcome parse_credits(const std::string& text, const ComparisonGroup& group,
                                 const WorkflowGraph& graph) {
  AttributionOutcome outcome;
  outcome.raw_attributer_text = text;
  outcome.parse_attempts = 1;

  // last complete block wins; the instruction itself contains an example block
  std::size_t begin = std::string::npos;
  std::size_t end = std::string::npos;
  for (std::size_t pos = text.find("===CREDITS==="); pos != std::string::npos;
       pos = text.find("===CREDITS===", pos + 1)) {
    const std::size_t close = text.find("===END===", pos);
    if (close != std::string::npos) {
      begin = pos + std::string("===CREDITS===").size();
      end = close;
    }
  }

  std::map<std::pair<int, std::string>, double> parsed;
  if (begin != std::string::npos) {
    std::istringstream lines(text.substr(begin, end - begin));
    std::string line;
    while (std::getline(lines, line)) {
      std::istringstream fields(line);
      std::string keyword, agent, value_text;
      int config = 0;
      if (!(fields >> keyword >> config >> agent >> value_text)) continue;
      if (keyword != "CREDIT") continue;
      if (std::find(group.member_config_indices.begin(), group.member_config_indices.end(),
                    config) == group.member_config_indices.end()) {
        continue;
      }
      if (!graph.find_agent(agent)) continue;
      double value = 0;
      auto res =
          std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
      if (res.ec != std::errc{}) continue;
      if (value < -1.0 || value > 1.0) {
        outcome.warnings.push_back("credit " + value_text + " for (" + agent + ", config " +
                                   std::to_string(config) + ") clamped to [-1,+1]");
        value = clamp_credit(value);
      }
      parsed[{config, agent}] = value;  // duplicates: last one wins
    }
  }

  for (const int config : group.member_config_indices) {
    for (const auto& agent : graph.agents) {
      CreditRecord rec;
      rec.query_id = group.query_id;
      rec.agent_id = agent.agent_id;
      rec.config_index = config;
      rec.group_id = group.group_id;
      auto it = parsed.find({config, agent.agent_id});
      if (it != parsed.end()) {
        rec.credit = it->second;
        rec.status = AttributionStatus::Attributed;
      } else {
        rec.credit = 0.0;
        rec.status = AttributionStatus::ParseFailed;
      }
      outcome.records.push_back(std::move(rec));
    }
  }
  return outcome;
}

ContrastiveAttributer::ContrastiveAttributer(ChatBackend& backend,
                                             std::string instruction_template,
                                             RetryPolicy transport_retry, int parse_retries)
    : backend_(backend),
      instruction_template_(std::move(instruction_template)),
      transport_retry_(transport_retry),
      parse_retries_(parse_retries) {}

AttributionOutcome ContrastiveAttributer::attribute_group(
    const Query& query, const ComparisonGroup& group,
    const std::vector<GroupMember>& members, const WorkflowGraph& graph) {
  // (agent, config) pairs the attributer must cover: the ones that executed
  std::map<std::pair<int, std::string>, bool> executed;
  for (std::size_t m = 0; m < members.size(); ++m) {
    const int config = group.member_config_indices[m];
    for (const auto& agent : graph.agents) {
      executed[{config, agent.agent_id}] =
          members[m].trajectory->final_output_of(agent.agent_id) != kNotExecutedMarker;
    }
  }

  AttributionOutcome outcome;
  int attempts = 0;
  for (; attempts <= parse_retries_; ++attempts) {
    const ChatRequest request =
        build_attribution_request(query, group, members, graph, instruction_template_);
    ChatResponse response;
    try {
      response = complete_with_retries(backend_, request, transport_retry_.retries,
                                       transport_retry_.base_delay_ms);
    } catch (const BackendError& e) {
      // total backend failure: every record defaults to 0/parse-failed
      outcome = parse_credits("", group, graph);
      outcome.parse_attempts = attempts + 1;
      outcome.warnings.push_back(std::string("attribution backend failed: ") + e.what());
      for (auto& rec : outcome.records) {
        if (!executed[{rec.config_index, rec.agent_id}]) {
          rec.credit = 0.0;
          rec.status = AttributionStatus::DefaultedUnexecuted;
        }
      }
      return outcome;
    }
    outcome = parse_credits(response.text, group, graph);
    outcome.parse_attempts = attempts + 1;
    bool complete = true;
    for (const auto& rec : outcome.records) {
      if (rec.status == AttributionStatus::ParseFailed &&
          executed[{rec.config_index, rec.agent_id}]) {
        complete = false;
        break;
      }
    }
    if (complete) break;
    if (attempts < parse_retries_) {
      outcome.warnings.push_back("credit block incomplete, retrying attribution call");
    }
  }

  for (auto& rec : outcome.records) {
    if (!executed[{rec.config_index, rec.agent_id}]) {
      rec.credit = 0.0;
      rec.status = AttributionStatus::DefaultedUnexecuted;
    }
  }
  return outcome;
}

AttributionOutcome IdentityAttributer::attribute_group(const Query&,
                                                       const ComparisonGroup& group,
                                                       const std::vector<GroupMember>& members,
                                                       const WorkflowGraph& graph) {
  AttributionOutcome outcome;
  for (std::size_t m = 0; m < members.size(); ++m) {
    const int config = group.member_config_indices[m];
    const double credit = clamp_credit(2.0 * members[m].score - 1.0);
    for (const auto& agent : graph.agents) {
      CreditRecord rec;
      rec.query_id = group.query_id;
      rec.agent_id = agent.agent_id;
      rec.config_index = config;
      rec.credit = credit;
      rec.group_id = group.group_id;
      rec.status = AttributionStatus::Attributed;
      outcome.records.push_back(std::move(rec));
    }
  }
  return outcome;
}

AttributionOutcome OracleAttributer::attribute_group(const Query&,
                                                     const ComparisonGroup& group,
                                                     const std::vector<GroupMember>& members,
                                                     const WorkflowGraph& graph) {
  AttributionOutcome outcome;
  const std::size_t m = members.size();
  for (const auto& agent : graph.agents) {
    std::vector<double> quality(m);
    for (std::size_t i = 0; i < m; ++i) {
      quality[i] = quality_(agent.agent_id, members[i].config->per_agent.at(agent.agent_id));
    }
    for (std::size_t i = 0; i < m; ++i) {
      // ascending average rank, then affine map onto [-1, +1]
      double below = 0;
      double equal = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j == i) continue;
        if (quality[j] < quality[i]) ++below;
        if (quality[j] == quality[i]) ++equal;
      }
      const double rank = 1.0 + below + equal / 2.0;
      const double credit = m > 1 ? 2.0 * (rank - 1.0) / (double(m) - 1.0) - 1.0 : 0.0;

      CreditRecord rec;
      rec.query_id = group.query_id;
      rec.agent_id = agent.agent_id;
      rec.config_index = group.member_config_indices[i];
      rec.credit = clamp_credit(credit);
      rec.group_id = group.group_id;
      rec.status = AttributionStatus::Attributed;
      outcome.records.push_back(std::move(rec));
    }
  }
  return outcome;
}

std::vector<AggregatedCredit> aggregate_credits(std::vector<CreditRecord> records,
                                                const std::vector<std::string>& expected_agents,
                                                int expected_k) {
  // fixed summation order: no dependence on the caller's record order
  std::sort(records.begin(), records.end(), [](const CreditRecord& a, const CreditRecord& b) {
    if (a.query_id != b.query_id) return a.query_id < b.query_id;
    if (a.config_index != b.config_index) return a.config_index < b.config_index;
    return a.agent_id < b.agent_id;
  });

  std::map<std::pair<std::string, int>, std::pair<double, int>> sums;  // (sum, count)
  for (const auto& rec : records) {
    auto& [sum, count] = sums[{rec.agent_id, rec.config_index}];
    sum += rec.credit;
    ++count;
  }

  if (!expected_agents.empty() && expected_k > 0) {
    for (const auto& agent : expected_agents) {
      for (int c = 1; c <= expected_k; ++c) {
        if (!sums.count({agent, c})) {
          throw std::runtime_error("aggregate_credits: no records for (" + agent +
                                   ", config " + std::to_string(c) +
                                   "); partitioning bug?");
        }
      }
    }
  }

  std::vector<AggregatedCredit> out;
  for (const auto& [key, sum_count] : sums) {
    AggregatedCredit agg;
    agg.agent_id = key.first;
    agg.config_index = key.second;
    agg.value = sum_count.first / sum_count.second;
    agg.n_queries = sum_count.second;
    out.push_back(std::move(agg));
  }
  return out;
}

}  // namespace cantante
