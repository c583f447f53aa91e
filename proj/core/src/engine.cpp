#include "cantante/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <future>
#include <regex>

namespace cantante {

std::string render_prompt(const AgentSpec& spec, const Parameterization& param,
                          const std::map<std::string, std::string>& variable_store) {
  const std::string& tmpl = param.prompt_template;
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '{') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
        out += '{';
        ++i;
        continue;
      }
      const std::size_t close = tmpl.find('}', i + 1);
      if (close == std::string::npos) {
        out += c;
        continue;
      }
      const std::string name = tmpl.substr(i + 1, close - i - 1);
      auto it = variable_store.find(name);
      if (it == variable_store.end()) {
        throw RolloutError("agent '" + spec.agent_id + "': unresolved placeholder {" +
                           name + "}");
      }
      out += it->second;
      i = close;
      continue;
    }
    if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out += '}';
      ++i;
      continue;
    }
    out += c;
  }
  return out;
}

std::string extract_output(std::string_view raw, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  const std::size_t close_at = raw.rfind(close);
  if (close_at == std::string_view::npos) return std::string(kExtractionFailureMarker);
  const std::size_t open_at = raw.rfind(open, close_at);
  if (open_at == std::string_view::npos) return std::string(kExtractionFailureMarker);
  const std::size_t begin = open_at + open.size();
  return std::string(raw.substr(begin, close_at - begin));
}

namespace {

struct ToolTag {
  std::string tool_id;
  std::string input;
};

// <tool:ID>input</tool> occurrences, in order of appearance
std::vector<ToolTag> find_tool_tags(std::string_view text) {
  std::vector<ToolTag> tags;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = text.find("<tool:", pos);
    if (open == std::string_view::npos) break;
    const std::size_t id_end = text.find('>', open + 6);
    if (id_end == std::string_view::npos) break;
    const std::size_t close = text.find("</tool>", id_end + 1);
    if (close == std::string_view::npos) break;
    tags.push_back(ToolTag{std::string(text.substr(open + 6, id_end - open - 6)),
                           std::string(text.substr(id_end + 1, close - id_end - 1))});
    pos = close + 7;
  }
  return tags;
}

std::string trimmed(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// Signalled upward when retries are exhausted; converted into a failed
// trajectory at the rollout root.
struct TransportFailed {};

class RolloutRunner {
 public:
  RolloutRunner(const WorkflowGraph& graph, const JointConfiguration& config,
                const Query& query, ChatBackend& backend, const ToolRegistry& tools,
                const RolloutOptions& opts)
      : graph_(graph),
        config_(config),
        query_(query),
        backend_(backend),
        tools_(tools),
        opts_(opts),
        ctx_{query.input_payload,
             {},
             SeedStream(derive_seed(opts.run_seed, "rollout", query.query_id,
                                    static_cast<std::uint64_t>(config.config_index)))} {
    // validated graphs terminate well before this; the bound only guards
    // against executing a graph that skipped validation
    int cap_sum = 0;
    for (const auto& [_, cap] : graph.loop_caps) cap_sum += cap;
    invocation_bound_ = static_cast<int>(graph.agents.size()) * (1 + cap_sum) + 8;
  }

  Trajectory run() {
    Trajectory traj;
    traj.query_id = query_.query_id;
    traj.config_index = config_.config_index;
    try {
      execute_from(graph_.entry_agent, ctx_.variable_store, traj.invocations);
    } catch (const TransportFailed&) {
      traj.failed = true;
    }
    for (const auto& rec : traj.invocations) traj.token_usage += rec.tokens;
    traj.final_prediction = last_terminal_output(traj.invocations);
    return traj;
  }

 private:
  // Runs the chain starting at `agent_id` until the rollout terminates,
  // appending to `records` and mutating `store`.
  void execute_from(std::string current, std::map<std::string, std::string>& store,
                    std::vector<InvocationRecord>& records) {
    while (!current.empty() && current != kEndTarget) {
      const std::string extracted = invoke_agent(current, store, records);
      const auto out_edges = graph_.edges_from(current);
      if (out_edges.empty()) return;

      bool has_branch = false;
      bool has_condition = false;
      for (const Edge* e : out_edges) {
        if (e->kind == EdgeKind::ParallelBranch) has_branch = true;
        if (e->condition) has_condition = true;
      }

      if (has_branch) {
        current = run_parallel_group(current, extracted, store, records);
        continue;
      }

      const Edge* chosen =
          has_condition ? choose_conditional(current, extracted, out_edges) : out_edges[0];
      if (!chosen) return;  // no matching edge and no default: rollout ends
      if (chosen->kind == EdgeKind::LoopBack && !admit_loop_back(*chosen)) return;
      apply_carries(*chosen, extracted, store, store);
      current = chosen->to;
    }
  }

  const Edge* choose_conditional(const std::string& source, const std::string& extracted,
                                 const std::vector<const Edge*>& out_edges) {
    std::vector<const Edge*> matching;
    const Edge* fallback = nullptr;
    for (const Edge* e : out_edges) {
      if (!e->condition) {
        throw RolloutError("edge '" + e->edge_id + "' from '" + source +
                           "' lacks a condition in a conditional family");
      }
      const EdgeCondition& c = *e->condition;
      if (c.kind == EdgeCondition::Kind::Default) {
        fallback = e;
        continue;
      }
      const std::string basis =
          c.field.empty() ? trimmed(extracted) : trimmed(extract_output(extracted, c.field));
      bool hit = false;
      if (c.kind == EdgeCondition::Kind::Equals) {
        hit = basis == c.value;
      } else {
        hit = std::regex_search(basis, std::regex(c.value));
      }
      if (hit) matching.push_back(e);
    }
    if (matching.size() > 1) {
      throw RolloutError("conditions of edges '" + matching[0]->edge_id + "' and '" +
                         matching[1]->edge_id + "' from '" + source +
                         "' match simultaneously");
    }
    if (matching.size() == 1) return matching[0];
    return fallback;  // validation guarantees one exists
  }

  // A loop-back edge is admitted while its target has run fewer than cap
  // times, so the cap bounds total target invocations.
  bool admit_loop_back(const Edge& edge) {
    const int cap = graph_.loop_caps.at(edge.edge_id);
    auto it = invocation_counts_.find(edge.to);
    const int target_runs = it == invocation_counts_.end() ? 0 : it->second;
    if (target_runs >= cap) return false;
    ++ctx_.loop_counters[edge.edge_id];
    return true;
  }

  // Branches run concurrently on forked stores; their write sets, invocation
  // records and token usage merge in declared edge order, which keeps
  // trajectories byte-identical across runs regardless of scheduling.
  std::string run_parallel_group(const std::string& source, const std::string& source_output,
                                 std::map<std::string, std::string>& store,
                                 std::vector<InvocationRecord>& records) {
    std::string err;
    const auto group = resolve_parallel_group(graph_, source, &err);
    if (!group) throw RolloutError(err);

    for (const Edge* feed : group->feed_edges) {
      apply_carries(*feed, source_output, store, store);
    }

    struct BranchResult {
      std::vector<InvocationRecord> records;
      std::vector<std::pair<std::string, std::string>> writes;
      bool transport_failed = false;
    };

    std::vector<std::future<BranchResult>> futures;
    for (std::size_t b = 0; b < group->branch_edges.size(); ++b) {
      const Edge* branch_edge = group->branch_edges[b];
      const auto& chain = group->chains[b];
      futures.push_back(std::async(std::launch::async, [this, branch_edge, &chain,
                                                        &source_output, store]() mutable {
        BranchResult result;
        std::map<std::string, std::string> local = store;
        auto track_writes = [&](const Edge& e, const std::string& out_val) {
          apply_carries(e, out_val, local, local, &result.writes);
        };
        try {
          track_writes(*branch_edge, source_output);
          for (std::size_t i = 0; i < chain.size(); ++i) {
            const std::string extracted =
                invoke_agent(chain[i], local, result.records, /*count_ordinals=*/false);
            const auto out = graph_.edges_from(chain[i]);
            // chain agents have exactly one plain out-edge (validated)
            track_writes(*out.at(0), extracted);
          }
        } catch (const TransportFailed&) {
          result.transport_failed = true;
        }
        return result;
      }));
    }

    bool failed = false;
    for (auto& f : futures) {
      BranchResult result = f.get();
      // assign ordinals deterministically, in declared branch order
      for (auto& rec : result.records) {
        rec.invocation_ordinal = ++invocation_counts_[rec.agent_id];
        records.push_back(std::move(rec));
      }
      for (auto& [var, value] : result.writes) {
        store[var] = value;
      }
      failed = failed || result.transport_failed;
    }
    if (failed) throw TransportFailed{};
    return group->join;
  }

  // writes carried variables into `sink`; `source_output` resolves the
  // distinguished `output` key, everything else passes through from `lookup`
  void apply_carries(const Edge& edge, const std::string& source_output,
                     const std::map<std::string, std::string>& lookup,
                     std::map<std::string, std::string>& sink,
                     std::vector<std::pair<std::string, std::string>>* writes = nullptr) {
    for (const auto& [src, dst] : edge.carries) {
      std::string value;
      if (src == kOutputKey) {
        value = source_output;
      } else {
        auto it = lookup.find(src);
        if (it == lookup.end()) {
          throw RolloutError("edge '" + edge.edge_id + "' carries unknown variable '" +
                             src + "'");
        }
        value = it->second;
      }
      if (writes) writes->emplace_back(dst, value);
      sink[dst] = std::move(value);
    }
  }

  std::string invoke_agent(const std::string& agent_id,
                           const std::map<std::string, std::string>& store,
                           std::vector<InvocationRecord>& records,
                           bool count_ordinals = true) {
    if (++total_invocations_ > invocation_bound_) {
      throw RolloutError("invocation bound exceeded; graph was not validated");
    }
    const AgentSpec* spec = graph_.find_agent(agent_id);
    if (!spec) throw RolloutError("unknown agent '" + agent_id + "'");
    auto param_it = config_.per_agent.find(agent_id);
    if (param_it == config_.per_agent.end()) {
      throw RolloutError("configuration has no parameterization for agent '" + agent_id +
                         "'");
    }

    InvocationRecord rec;
    rec.agent_id = agent_id;
    rec.rendered_prompt = render_prompt(*spec, param_it->second, store);

    ChatRequest request;
    request.messages.push_back({MessageRole::User, rec.rendered_prompt});
    request.temperature = spec->generation.temperature;
    request.max_output_tokens = spec->generation.max_output_tokens;
    request.category = CallCategory::Downstream;

    ChatResponse resp = call_with_retries(request);
    rec.tokens += resp.usage;

    // bounded tool loop: execute <tool:ID>...</tool> requests, feed results
    // back, regenerate
    for (int round = 0; round < opts_.max_tool_rounds; ++round) {
      const auto tags = find_tool_tags(resp.text);
      if (tags.empty()) break;
      std::string results = "Tool results:\n";
      for (const auto& tag : tags) {
        std::string output;
        const bool declared = std::find(spec->tool_ids.begin(), spec->tool_ids.end(),
                                        tag.tool_id) != spec->tool_ids.end();
        if (!declared) {
          output = "[tool-error] tool not available to this agent: " + tag.tool_id;
        } else {
          output = tools_.invoke(tag.tool_id, tag.input);
        }
        rec.tool_calls.push_back(ToolCall{tag.tool_id, tag.input, output});
        results += "[" + tag.tool_id + "] " + output + "\n";
      }
      request.messages.push_back({MessageRole::User, resp.text});
      request.messages.push_back({MessageRole::User, results});
      resp = call_with_retries(request);
      rec.tokens += resp.usage;
    }

    rec.raw_output = resp.text;
    rec.extracted_output = extract_output(resp.text, spec->output_tag);
    if (count_ordinals) {
      rec.invocation_ordinal = ++invocation_counts_[agent_id];
    }
    std::string extracted = rec.extracted_output;
    records.push_back(std::move(rec));
    return extracted;
  }

  ChatResponse call_with_retries(const ChatRequest& request) {
    try {
      return complete_with_retries(backend_, request, opts_.retry.retries,
                                   opts_.retry.base_delay_ms);
    } catch (const BackendError&) {
      throw TransportFailed{};
    }
  }

  std::string last_terminal_output(const std::vector<InvocationRecord>& records) const {
    const InvocationRecord* last = nullptr;
    for (const auto& rec : records) {
      if (graph_.is_terminal(rec.agent_id)) last = &rec;
    }
    return last ? last->extracted_output : std::string(kExtractionFailureMarker);
  }

  const WorkflowGraph& graph_;
  const JointConfiguration& config_;
  const Query& query_;
  ChatBackend& backend_;
  const ToolRegistry& tools_;
  const RolloutOptions& opts_;
  RolloutContext ctx_;
  std::map<std::string, int> invocation_counts_;
  std::atomic<int> total_invocations_{0};
  int invocation_bound_ = 1 << 20;
};

}  // namespace

Trajectory execute_rollout(const WorkflowGraph& graph, const JointConfiguration& config,
                           const Query& query, ChatBackend& backend,
                           const ToolRegistry& tools, const RolloutOptions& opts) {
  return RolloutRunner(graph, config, query, backend, tools, opts).run();
}

}  // namespace cantante
