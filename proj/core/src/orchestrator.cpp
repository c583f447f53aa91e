#include "cantante/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cantante/csv.hpp"
#include "cantante/graph.hpp"
#include "cantante/http_backend.hpp"
#include "cantante/resources.hpp"

namespace cantante {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(AttributerKind k) {
  switch (k) {
    case AttributerKind::Contrastive: return "contrastive";
    case AttributerKind::Identity: return "identity";
    case AttributerKind::Oracle: return "oracle";
  }
  return "contrastive";
}

AttributerKind attributer_kind_from_string(std::string_view s) {
  if (s == "contrastive") return AttributerKind::Contrastive;
  if (s == "identity") return AttributerKind::Identity;
  if (s == "oracle") return AttributerKind::Oracle;
  throw ConfigError("unknown attributer kind: " + std::string(s));
}

void validate_run_config(const RunConfig& config) {
  if (config.k_configurations < 2) throw ConfigError("k_configurations must be >= 2");
  if (config.group_size < 2) throw ConfigError("group_size must be >= 2");
  if (config.token_budget <= 0) throw ConfigError("token_budget must be > 0");
  if (config.max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (config.population_size < 1) throw ConfigError("population_size must be >= 1");
  if (config.population_size > config.k_configurations) {
    throw ConfigError("population_size cannot exceed k_configurations");
  }
  if (config.workers < 1) throw ConfigError("workers must be >= 1");
  if (config.output_dir.empty()) throw ConfigError("output_dir must be set");
  if (config.task.kind != "synthetic" && config.task.kind != "file") {
    throw ConfigError("task.kind must be 'synthetic' or 'file'");
  }
  if (config.task.kind == "synthetic" && config.task.n_agents < 2) {
    throw ConfigError("task.n_agents must be >= 2");
  }
  if (config.task.kind == "file" &&
      (config.task.graph_path.empty() || config.task.dataset_path.empty())) {
    throw ConfigError("file tasks need task.graph and task.dataset");
  }
  if (config.attributer == AttributerKind::Oracle && config.task.kind != "synthetic") {
    throw ConfigError("the oracle attributer needs the synthetic task's quality oracle");
  }
  for (const auto* b : {&config.downstream_backend, &config.meta_backend}) {
    if (b->kind != "synthetic" && b->kind != "http" && b->kind != "scripted") {
      throw ConfigError("backend kind must be synthetic, http or scripted");
    }
    if (b->kind == "http" && b->base_url.empty()) {
      throw ConfigError("http backends need base_url");
    }
  }
}

void TokenLedger::add(CallCategory category, const TokenTriple& usage) {
  std::lock_guard lock(mu_);
  totals_[static_cast<int>(category)] += usage;
}

void TokenLedger::restore(CallCategory category, const TokenTriple& total) {
  std::lock_guard lock(mu_);
  totals_[static_cast<int>(category)] = total;
}

TokenTriple TokenLedger::category_total(CallCategory category) const {
  std::lock_guard lock(mu_);
  return totals_[static_cast<int>(category)];
}

TokenTriple TokenLedger::grand_total() const {
  std::lock_guard lock(mu_);
  TokenTriple t;
  for (const auto& c : totals_) t += c;
  return t;
}

BudgetDecision check_budget(const TokenLedger& ledger) {
  return ledger.grand_total().total >= ledger.budget() ? BudgetDecision::Stop
                                                       : BudgetDecision::Continue;
}

namespace {

// bounded worker pool; rethrows the first exception after joining
void parallel_for(std::size_t n_tasks, int workers,
                  const std::function<void(std::size_t)>& fn) {
  if (n_tasks == 0) return;
  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(n_tasks)));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n_tasks) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

void atomic_write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

}  // namespace

double mean_score(const std::vector<EvalResult>& per_query) {
  if (per_query.empty()) return 0.0;
  double sum = 0;
  for (const auto& r : per_query) sum += r.score;
  return sum / static_cast<double>(per_query.size());
}

std::vector<std::vector<EvalResult>> evaluate_configurations(
    const std::vector<JointConfiguration>& configs, const std::vector<const Query*>& queries,
    const WorkflowGraph& graph, ChatBackend& backend, const Scorer& scorer,
    const EvalOptions& opts) {
  static const ToolRegistry default_tools = ToolRegistry::with_builtins();
  const ToolRegistry& tools = opts.tools ? *opts.tools : default_tools;

  std::vector<std::vector<EvalResult>> results(configs.size());
  for (auto& row : results) row.resize(queries.size());

  RolloutOptions rollout_opts;
  rollout_opts.run_seed = opts.run_seed;
  rollout_opts.retry = opts.retry;

  const std::size_t n_tasks = configs.size() * queries.size();
  parallel_for(n_tasks, opts.workers, [&](std::size_t task) {
    const std::size_t c = task / queries.size();
    const std::size_t q = task % queries.size();
    EvalResult& slot = results[c][q];
    try {
      slot.trajectory =
          execute_rollout(graph, configs[c], *queries[q], backend, tools, rollout_opts);
    } catch (const RolloutError&) {
      slot.trajectory.query_id = queries[q]->query_id;
      slot.trajectory.config_index = configs[c].config_index;
      slot.trajectory.failed = true;
    }
    if (slot.trajectory.failed) {
      slot.score = 0.0;  // failed rollouts score 0 and stay flagged
    } else {
      slot.score = scorer(slot.trajectory.final_prediction, *queries[q]);
    }
    slot.trajectory.system_score = slot.score;
  });
  return results;
}

// ---------------------------------------------------------------------------
// RunConfig (de)serialization
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

BackendSettings backend_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"kind", "base_url", "model", "api_key_env", "max_in_flight", "script"},
                 where);
  BackendSettings b;
  b.kind = j.value("kind", std::string("synthetic"));
  b.base_url = j.value("base_url", std::string{});
  b.model = j.value("model", std::string{});
  b.api_key_env = j.value("api_key_env", std::string("CANTANTE_API_KEY"));
  b.max_in_flight = j.value("max_in_flight", 8);
  if (j.contains("script")) b.script = j.at("script").get<std::vector<std::string>>();
  return b;
}

json backend_to_json(const BackendSettings& b) {
  json j{{"kind", b.kind}};
  if (!b.base_url.empty()) j["base_url"] = b.base_url;
  if (!b.model.empty()) j["model"] = b.model;
  j["api_key_env"] = b.api_key_env;
  j["max_in_flight"] = b.max_in_flight;
  if (!b.script.empty()) j["script"] = b.script;
  return j;
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
  reject_unknown(doc,
                 {"task", "downstream_backend", "meta_backend", "k_configurations",
                  "group_size", "max_iterations", "token_budget", "seed", "attributer",
                  "optimizer", "population_size", "dev_size", "test_size", "output_dir",
                  "attribution_prompt_path", "keep_trajectories", "workers",
                  "retry_base_delay_ms"},
                 "top level");
  RunConfig c;
  if (doc.contains("task")) {
    const json& t = doc.at("task");
    reject_unknown(t, {"kind", "n_agents", "n_queries", "graph", "dataset", "scorer"},
                   "task");
    c.task.kind = t.value("kind", std::string("synthetic"));
    c.task.n_agents = t.value("n_agents", 4);
    c.task.n_queries = t.value("n_queries", 20);
    c.task.graph_path = t.value("graph", std::string{});
    c.task.dataset_path = t.value("dataset", std::string{});
    c.task.scorer = t.value("scorer", c.task.kind == "synthetic" ? std::string("synthetic")
                                                                 : std::string("exact_match"));
  }
  if (doc.contains("downstream_backend")) {
    c.downstream_backend = backend_from_json(doc.at("downstream_backend"),
                                             "downstream_backend");
  }
  if (doc.contains("meta_backend")) {
    c.meta_backend = backend_from_json(doc.at("meta_backend"), "meta_backend");
  }
  c.k_configurations = doc.value("k_configurations", 9);
  c.group_size = doc.value("group_size", 3);
  c.max_iterations = doc.value("max_iterations", 10);
  c.token_budget = doc.value("token_budget", static_cast<std::int64_t>(10'000'000));
  c.seed = doc.value("seed", static_cast<std::uint64_t>(42));
  if (doc.contains("attributer")) {
    c.attributer = attributer_kind_from_string(doc.at("attributer").get<std::string>());
  }
  if (doc.contains("optimizer")) {
    c.optimizer = optimizer_kind_from_string(doc.at("optimizer").get<std::string>());
  }
  c.population_size = doc.value("population_size", 6);
  c.dev_size = doc.value("dev_size", 300);
  c.test_size = doc.value("test_size", 500);
  c.output_dir = doc.value("output_dir", std::string("run"));
  c.attribution_prompt_path = doc.value("attribution_prompt_path", std::string{});
  c.keep_trajectories = doc.value("keep_trajectories", false);
  c.workers = doc.value("workers", 4);
  c.retry_base_delay_ms = doc.value("retry_base_delay_ms", 250);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return run_config_from_json(doc);
}

json run_config_to_json(const RunConfig& c) {
  json t{{"kind", c.task.kind}, {"scorer", c.task.scorer}};
  if (c.task.kind == "synthetic") {
    t["n_agents"] = c.task.n_agents;
    t["n_queries"] = c.task.n_queries;
  } else {
    t["graph"] = c.task.graph_path;
    t["dataset"] = c.task.dataset_path;
  }
  return json{{"task", std::move(t)},
              {"downstream_backend", backend_to_json(c.downstream_backend)},
              {"meta_backend", backend_to_json(c.meta_backend)},
              {"k_configurations", c.k_configurations},
              {"group_size", c.group_size},
              {"max_iterations", c.max_iterations},
              {"token_budget", c.token_budget},
              {"seed", c.seed},
              {"attributer", std::string(to_string(c.attributer))},
              {"optimizer", std::string(to_string(c.optimizer))},
              {"population_size", c.population_size},
              {"dev_size", c.dev_size},
              {"test_size", c.test_size},
              {"output_dir", c.output_dir},
              {"attribution_prompt_path", c.attribution_prompt_path},
              {"keep_trajectories", c.keep_trajectories},
              {"workers", c.workers},
              {"retry_base_delay_ms", c.retry_base_delay_ms}};
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  try {
    if (key == "seed") {
      config.seed = static_cast<std::uint64_t>(parse_int(value));
    } else if (key == "k_configurations") {
      config.k_configurations = static_cast<int>(parse_int(value));
    } else if (key == "group_size") {
      config.group_size = static_cast<int>(parse_int(value));
    } else if (key == "max_iterations") {
      config.max_iterations = static_cast<int>(parse_int(value));
    } else if (key == "token_budget") {
      config.token_budget = parse_int(value);
    } else if (key == "population_size") {
      config.population_size = static_cast<int>(parse_int(value));
    } else if (key == "dev_size") {
      config.dev_size = static_cast<int>(parse_int(value));
    } else if (key == "test_size") {
      config.test_size = static_cast<int>(parse_int(value));
    } else if (key == "workers") {
      config.workers = static_cast<int>(parse_int(value));
    } else if (key == "retry_base_delay_ms") {
      config.retry_base_delay_ms = static_cast<int>(parse_int(value));
    } else if (key == "attributer") {
      config.attributer = attributer_kind_from_string(value);
    } else if (key == "optimizer") {
      config.optimizer = optimizer_kind_from_string(value);
    } else if (key == "output_dir") {
      config.output_dir = value;
    } else if (key == "scorer") {
      config.task.scorer = value;
    } else if (key == "keep_trajectories") {
      config.keep_trajectories = value == "true" || value == "1";
    } else if (key == "attribution_prompt_path") {
      config.attribution_prompt_path = value;
    } else {
      throw ConfigError("override targets unknown or non-scalar field: " + key);
    }
  } catch (const std::runtime_error& e) {
    throw ConfigError("override " + key + "=" + value + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Orchestrator
// ---------------------------------------------------------------------------

struct Orchestrator::Impl {
  RunConfig config;

  WorkflowGraph graph;
  Dataset dataset;
  Scorer scorer;
  QualityOracle quality;  // synthetic tasks only
  ToolRegistry tools = ToolRegistry::with_builtins();

  std::unique_ptr<ChatBackend> downstream_raw;
  std::unique_ptr<ChatBackend> meta_raw;
  std::unique_ptr<LedgerRecordingBackend> downstream;
  std::unique_ptr<LedgerRecordingBackend> meta;
  std::unique_ptr<TokenLedger> ledger;
  std::unique_ptr<Attributer> attributer;
  std::map<std::string, std::unique_ptr<LocalOptimizer>> optimizers;
  std::map<std::string, OptimizerState> states;

  int iteration = 0;  // completed iterations
  bool finished = false;
  BestConfiguration best;
  std::vector<IterationSummary> history;
  std::vector<std::pair<int, CreditRecord>> all_credits;  // (iteration, record)
  long parse_failed_credits = 0;

  fs::path out_dir;
  Orchestrator::BackendOverrides overrides;

  explicit Impl(RunConfig cfg, Orchestrator::BackendOverrides ovr)
      : config(std::move(cfg)), overrides(ovr) {
    validate_run_config(config);
    out_dir = config.output_dir;
    build_task();
    build_backends();
    build_attributer();
    build_optimizers();
  }

  void build_task() {
    if (config.task.kind == "synthetic") {
      SyntheticTask task =
          make_synthetic_task(config.task.n_agents, config.task.n_queries, config.seed);
      graph = std::move(task.graph);
      dataset = std::move(task.dataset);
      scorer = std::move(task.scorer);
      quality = std::move(task.quality);
    } else {
      try {
        graph = load_graph_file(config.task.graph_path);
        dataset = load_dataset(config.task.dataset_path, config.dev_size, config.test_size,
                               config.seed);
      } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());  // task inputs are configuration
      }
      scorer = ScorerRegistry().get(config.task.scorer);
    }
    const auto violations = validate_graph(graph);
    if (!violations.empty()) {
      std::string msg = "graph is invalid:";
      for (const auto& v : violations) msg += "\n  " + v.where + ": " + v.message;
      throw ConfigError(msg);
    }
  }

  std::unique_ptr<ChatBackend> build_backend(const BackendSettings& settings,
                                             std::string_view role) {
    if (settings.kind == "synthetic") {
      if (role == "meta") {
        return std::make_unique<SyntheticMetaBackend>(derive_seed(config.seed, "meta"));
      }
      return std::make_unique<SyntheticQualityBackend>(derive_seed(config.seed, "downstream"));
    }
    if (settings.kind == "scripted") {
      return std::make_unique<ScriptedBackend>(settings.script);
    }
    HttpBackendConfig http;
    http.base_url = settings.base_url;
    http.model = settings.model;
    http.max_in_flight = settings.max_in_flight;
    if (const char* key = std::getenv(settings.api_key_env.c_str())) {
      http.api_key = key;
    }
    return std::make_unique<HttpChatBackend>(std::move(http));
  }

  void build_backends() {
    ledger = std::make_unique<TokenLedger>(config.token_budget);
    ChatBackend* downstream_inner = overrides.downstream;
    ChatBackend* meta_inner = overrides.meta;
    if (!downstream_inner) {
      downstream_raw = build_backend(config.downstream_backend, "downstream");
      downstream_inner = downstream_raw.get();
    }
    if (!meta_inner) {
      meta_raw = build_backend(config.meta_backend, "meta");
      meta_inner = meta_raw.get();
    }
    downstream = std::make_unique<LedgerRecordingBackend>(*downstream_inner, *ledger);
    meta = std::make_unique<LedgerRecordingBackend>(*meta_inner, *ledger);
  }

  std::string attribution_instruction() const {
    if (!config.attribution_prompt_path.empty()) {
      std::ifstream in(config.attribution_prompt_path);
      if (!in) {
        throw ConfigError("cannot open attribution prompt file: " +
                          config.attribution_prompt_path);
      }
      return std::string(std::istreambuf_iterator<char>(in), {});
    }
    return std::string(resources::k_attribution_prompt);
  }

  void build_attributer() {
    switch (config.attributer) {
      case AttributerKind::Contrastive:
        attributer = std::make_unique<ContrastiveAttributer>(
            *meta, attribution_instruction(),
            RetryPolicy{2, config.retry_base_delay_ms});
        break;
      case AttributerKind::Identity:
        attributer = std::make_unique<IdentityAttributer>();
        break;
      case AttributerKind::Oracle:
        attributer = std::make_unique<OracleAttributer>(quality);
        break;
    }
  }

  void build_optimizers() {
    EvoOptions options;
    options.population_size = config.population_size;
    options.offspring = config.k_configurations - config.population_size;
    options.transport_retry = RetryPolicy{2, config.retry_base_delay_ms};
    for (const auto& agent : graph.agents) {
      optimizers[agent.agent_id] = make_optimizer(config.optimizer, agent, *meta,
                                                  MetaPrompts::builtin(), options);
    }
  }

  void initialize_states() {
    for (const auto& agent : graph.agents) {
      OptimizerState state;
      state.agent_id = agent.agent_id;
      state.generation = 0;
      state.rng_stream =
          SeedStream(derive_seed(config.seed, "optimizer-rng", agent.agent_id));
      const auto initial = generate_initial_prompts(
          agent, config.population_size, *meta, MetaPrompts::builtin(), 3,
          RetryPolicy{2, config.retry_base_delay_ms});
      for (const auto& p : initial) {
        state.population.push_back(ScoredParameterization{p, std::nullopt});
      }
      states[agent.agent_id] = std::move(state);
    }
  }

  std::vector<const Query*> dev_queries() const { return dataset.dev(); }

  // ---- one full iteration of the outer loop ----
  void run_iteration() {
    const int t = iteration + 1;

    // suggest + assemble
    std::map<std::string, std::vector<Parameterization>> candidates;
    for (auto& [agent_id, opt] : optimizers) {
      candidates[agent_id] = opt->suggest(states.at(agent_id));
    }
    const std::vector<JointConfiguration> configs =
        assemble_joint_configurations(candidates);
    if (static_cast<int>(configs.size()) != config.k_configurations) {
      throw std::logic_error("suggest() produced a candidate count != K");
    }

    // evaluate on the dev split
    EvalOptions eval_opts;
    eval_opts.run_seed = config.seed;
    eval_opts.retry = RetryPolicy{2, config.retry_base_delay_ms};
    eval_opts.workers = config.workers;
    eval_opts.tools = &tools;
    const auto queries = dev_queries();
    const auto results = evaluate_configurations(configs, queries, graph, *downstream,
                                                 scorer, eval_opts);

    IterationSummary summary;
    summary.iteration = t;
    for (std::size_t c = 0; c < results.size(); ++c) {
      summary.mean_dev_scores.push_back(mean_score(results[c]));
    }

    // dev-selected best, ties to earlier iteration then lower config index
    for (std::size_t c = 0; c < summary.mean_dev_scores.size(); ++c) {
      if (summary.mean_dev_scores[c] > best.score) {
        best.score = summary.mean_dev_scores[c];
        best.iteration = t;
        best.config_index = static_cast<int>(c) + 1;
        best.prompts.clear();
        for (const auto& [agent_id, param] : configs[c].per_agent) {
          best.prompts[agent_id] = param.prompt_template;
        }
      }
    }

    // partition and attribute, per query; group calls fan out to the pool
    struct GroupTask {
      std::size_t query_index;
      ComparisonGroup group;
    };
    std::vector<GroupTask> tasks;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      SeedStream rng(derive_seed(config.seed, "partition", static_cast<std::uint64_t>(t),
                                 static_cast<std::uint64_t>(q)));
      for (auto& group : partition_into_groups(config.k_configurations, config.group_size,
                                               rng, queries[q]->query_id)) {
        tasks.push_back(GroupTask{q, std::move(group)});
      }
    }
    std::vector<AttributionOutcome> outcomes(tasks.size());
    parallel_for(tasks.size(), config.workers, [&](std::size_t i) {
      const GroupTask& task = tasks[i];
      std::vector<GroupMember> members;
      for (const int config_index : task.group.member_config_indices) {
        GroupMember member;
        member.trajectory = &results[config_index - 1][task.query_index].trajectory;
        member.config = &configs[config_index - 1];
        member.score = results[config_index - 1][task.query_index].score;
        members.push_back(member);
      }
      outcomes[i] =
          attributer->attribute_group(*queries[task.query_index], task.group, members, graph);
    });

    std::vector<CreditRecord> iteration_credits;
    for (const auto& outcome : outcomes) {
      for (const auto& rec : outcome.records) {
        if (rec.status == AttributionStatus::ParseFailed) ++parse_failed_credits;
        iteration_credits.push_back(rec);
      }
    }

    // aggregate per (agent, config) across queries
    std::vector<std::string> agent_ids;
    for (const auto& a : graph.agents) agent_ids.push_back(a.agent_id);
    summary.aggregated =
        aggregate_credits(iteration_credits, agent_ids, config.k_configurations);

    // update every local optimizer with its parameter-credit pairs
    std::map<std::pair<std::string, int>, double> credit_of;
    for (const auto& agg : summary.aggregated) {
      credit_of[{agg.agent_id, agg.config_index}] = agg.value;
    }
    for (auto& [agent_id, opt] : optimizers) {
      std::vector<std::pair<Parameterization, double>> pairs;
      for (int c = 1; c <= config.k_configurations; ++c) {
        pairs.emplace_back(candidates.at(agent_id)[c - 1], credit_of.at({agent_id, c}));
      }
      opt->update(states.at(agent_id), pairs);
    }

    summary.downstream = ledger->category_total(CallCategory::Downstream);
    summary.optimizer = ledger->category_total(CallCategory::Optimizer);
    summary.attribution = ledger->category_total(CallCategory::Attribution);
    history.push_back(std::move(summary));
    for (auto& rec : iteration_credits) all_credits.emplace_back(t, std::move(rec));
    iteration = t;

    if (config.keep_trajectories) write_trajectories(t, configs, queries, results);
    persist();
  }

  // ---- persistence ----

  void write_trajectories(int t, const std::vector<JointConfiguration>& configs,
                          const std::vector<const Query*>& queries,
                          const std::vector<std::vector<EvalResult>>& results) {
    std::string body;
    for (std::size_t c = 0; c < configs.size(); ++c) {
      for (std::size_t q = 0; q < queries.size(); ++q) {
        const Trajectory& traj = results[c][q].trajectory;
        json rec{{"iteration", t},
                 {"query", traj.query_id},
                 {"config", traj.config_index},
                 {"final_prediction", traj.final_prediction},
                 {"score", traj.system_score},
                 {"failed", traj.failed},
                 {"tokens", {{"input", traj.token_usage.input},
                             {"output", traj.token_usage.output}}}};
        rec["invocations"] = json::array();
        for (const auto& inv : traj.invocations) {
          json ji{{"agent", inv.agent_id},
                  {"ordinal", inv.invocation_ordinal},
                  {"rendered_prompt", inv.rendered_prompt},
                  {"raw_output", inv.raw_output},
                  {"extracted_output", inv.extracted_output}};
          ji["tool_calls"] = json::array();
          for (const auto& call : inv.tool_calls) {
            ji["tool_calls"].push_back(
                {{"tool", call.tool_id}, {"input", call.input}, {"output", call.output}});
          }
          rec["invocations"].push_back(std::move(ji));
        }
        body += rec.dump() + "\n";
      }
    }
    atomic_write_file(out_dir / ("trajectories_iter" + std::to_string(t) + ".jsonl"), body);
  }

  std::string history_csv() const {
    std::ostringstream os;
    write_csv_row(os, {"iteration", "config", "mean_dev_score"});
    for (const auto& summary : history) {
      for (std::size_t c = 0; c < summary.mean_dev_scores.size(); ++c) {
        write_csv_row(os, {format_int(summary.iteration), format_int(static_cast<int>(c) + 1),
                           format_double(summary.mean_dev_scores[c])});
      }
    }
    return os.str();
  }

  std::string credits_csv() const {
    std::ostringstream os;
    write_csv_row(os, {"iteration", "query", "agent", "config", "credit", "status"});
    for (const auto& [iter, rec] : all_credits) {
      write_csv_row(os, {format_int(iter), rec.query_id, rec.agent_id,
                         format_int(rec.config_index), format_double(rec.credit),
                         std::string(to_string(rec.status))});
    }
    return os.str();
  }

  std::string ledger_csv() const {
    std::ostringstream os;
    write_csv_row(os, {"category", "input", "output"});
    for (const CallCategory cat : {CallCategory::Downstream, CallCategory::Optimizer,
                                   CallCategory::Attribution}) {
      const TokenTriple t = ledger->category_total(cat);
      write_csv_row(os, {std::string(to_string(cat)), format_int(t.input),
                         format_int(t.output)});
    }
    return os.str();
  }

  json state_json() const {
    json optimizer_states = json::object();
    for (const auto& [agent_id, state] : states) {
      json population = json::array();
      for (const auto& sp : state.population) {
        json p{{"template", sp.param.prompt_template},
               {"origin", std::string(to_string(sp.param.origin))},
               {"lineage", sp.param.lineage_id}};
        if (sp.fitness) p["fitness"] = *sp.fitness;
        population.push_back(std::move(p));
      }
      optimizer_states[agent_id] = json{{"generation", state.generation},
                                        {"rng_key", state.rng_stream.key()},
                                        {"rng_counter", state.rng_stream.counter()},
                                        {"population", std::move(population)}};
    }
    json history_json = json::array();
    for (const auto& summary : history) {
      json aggregated = json::array();
      for (const auto& agg : summary.aggregated) {
        aggregated.push_back(json{{"agent", agg.agent_id},
                                  {"config", agg.config_index},
                                  {"value", agg.value},
                                  {"n_queries", agg.n_queries}});
      }
      history_json.push_back(json{
          {"iteration", summary.iteration},
          {"mean_dev_scores", summary.mean_dev_scores},
          {"aggregated", std::move(aggregated)},
          {"ledger",
           {{"downstream", {{"input", summary.downstream.input},
                            {"output", summary.downstream.output}}},
            {"optimizer", {{"input", summary.optimizer.input},
                           {"output", summary.optimizer.output}}},
            {"attribution", {{"input", summary.attribution.input},
                             {"output", summary.attribution.output}}}}}});
    }
    const TokenTriple led_d = ledger->category_total(CallCategory::Downstream);
    const TokenTriple led_o = ledger->category_total(CallCategory::Optimizer);
    const TokenTriple led_a = ledger->category_total(CallCategory::Attribution);
    return json{{"config", run_config_to_json(config)},
                {"iteration", iteration},
                {"finished", finished},
                {"parse_failed_credits", parse_failed_credits},
                {"ledger",
                 {{"downstream", {{"input", led_d.input}, {"output", led_d.output}}},
                  {"optimizer", {{"input", led_o.input}, {"output", led_o.output}}},
                  {"attribution", {{"input", led_a.input}, {"output", led_a.output}}}}},
                {"best",
                 {{"iteration", best.iteration},
                  {"config_index", best.config_index},
                  {"score", best.score},
                  {"prompts", best.prompts}}},
                {"optimizers", std::move(optimizer_states)},
                {"history", std::move(history_json)}};
  }

  void persist() {
    fs::create_directories(out_dir);
    atomic_write_file(out_dir / "history.csv", history_csv());
    atomic_write_file(out_dir / "credits.csv", credits_csv());
    atomic_write_file(out_dir / "ledger.csv", ledger_csv());
    atomic_write_file(out_dir / "state.json", state_json().dump(2) + "\n");
  }

  void write_best_config() {
    if (best.prompts.empty()) return;
    fs::create_directories(out_dir / "best_config");
    for (const auto& [agent_id, prompt] : best.prompts) {
      atomic_write_file(out_dir / "best_config" / (agent_id + ".txt"), prompt + "\n");
    }
  }

  RunReport report() const {
    RunReport rep;
    rep.best = best;
    rep.iterations = iteration;
    rep.budget_exhausted = check_budget(*ledger) == BudgetDecision::Stop;
    rep.downstream = ledger->category_total(CallCategory::Downstream);
    rep.optimizer = ledger->category_total(CallCategory::Optimizer);
    rep.attribution = ledger->category_total(CallCategory::Attribution);
    rep.grand_total = ledger->grand_total().total;
    rep.parse_failed_credits = parse_failed_credits;
    rep.output_dir = out_dir.string();
    return rep;
  }

  RunReport run() {
    if (finished) return report();
    fs::create_directories(out_dir);
    if (iteration == 0 && states.empty()) {
      initialize_states();
      persist();
    }
    while (iteration < config.max_iterations &&
           check_budget(*ledger) == BudgetDecision::Continue) {
      run_iteration();
    }
    finished = true;
    persist();
    write_best_config();
    return report();
  }

  // ---- resume ----

  void load_state(const json& doc) {
    iteration = doc.at("iteration").get<int>();
    finished = doc.at("finished").get<bool>();
    parse_failed_credits = doc.value("parse_failed_credits", 0);
    const json& b = doc.at("best");
    best.iteration = b.at("iteration").get<int>();
    best.config_index = b.at("config_index").get<int>();
    best.score = b.at("score").get<double>();
    if (b.contains("prompts")) {
      for (const auto& [agent, prompt] : b.at("prompts").items()) {
        best.prompts[agent] = prompt.get<std::string>();
      }
    }
    for (const auto& [agent_id, js] : doc.at("optimizers").items()) {
      OptimizerState state;
      state.agent_id = agent_id;
      state.generation = js.at("generation").get<int>();
      state.rng_stream = SeedStream(js.at("rng_key").get<std::uint64_t>(),
                                    js.at("rng_counter").get<std::uint64_t>());
      for (const json& p : js.at("population")) {
        ScoredParameterization sp;
        sp.param.prompt_template = p.at("template").get<std::string>();
        sp.param.origin = prompt_origin_from_string(p.at("origin").get<std::string>());
        sp.param.lineage_id = p.at("lineage").get<std::string>();
        if (p.contains("fitness")) sp.fitness = p.at("fitness").get<double>();
        state.population.push_back(std::move(sp));
      }
      states[agent_id] = std::move(state);
    }
    for (const json& js : doc.at("history")) {
      IterationSummary summary;
      summary.iteration = js.at("iteration").get<int>();
      summary.mean_dev_scores = js.at("mean_dev_scores").get<std::vector<double>>();
      for (const json& a : js.at("aggregated")) {
        summary.aggregated.push_back(AggregatedCredit{
            a.at("agent").get<std::string>(), a.at("config").get<int>(),
            a.at("value").get<double>(), a.at("n_queries").get<int>()});
      }
      auto read_triple = [&](const char* name) {
        const json& t = js.at("ledger").at(name);
        return TokenTriple::of(t.at("input").get<std::int64_t>(),
                               t.at("output").get<std::int64_t>());
      };
      summary.downstream = read_triple("downstream");
      summary.optimizer = read_triple("optimizer");
      summary.attribution = read_triple("attribution");
      history.push_back(std::move(summary));
    }
    if (doc.contains("ledger")) {
      auto read_triple = [&](const char* name) {
        const json& t = doc.at("ledger").at(name);
        return TokenTriple::of(t.at("input").get<std::int64_t>(),
                               t.at("output").get<std::int64_t>());
      };
      ledger->restore(CallCategory::Downstream, read_triple("downstream"));
      ledger->restore(CallCategory::Optimizer, read_triple("optimizer"));
      ledger->restore(CallCategory::Attribution, read_triple("attribution"));
    }
    // credits rows reload so rewrites stay complete
    const fs::path credits_path = out_dir / "credits.csv";
    if (fs::exists(credits_path)) {
      const auto rows = read_csv_file(credits_path.string());
      for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() != 6) continue;
        const int it = static_cast<int>(parse_int(row[0]));
        if (it > iteration) continue;  // drop rows from a torn iteration
        CreditRecord rec;
        rec.query_id = row[1];
        rec.agent_id = row[2];
        rec.config_index = static_cast<int>(parse_int(row[3]));
        rec.credit = parse_double(row[4]);
        rec.status = attribution_status_from_string(row[5]);
        all_credits.emplace_back(it, std::move(rec));
      }
    }
  }
};

Orchestrator::Orchestrator(RunConfig config)
    : Orchestrator(std::move(config), BackendOverrides{}) {}

Orchestrator::Orchestrator(RunConfig config, BackendOverrides overrides)
    : impl_(std::make_unique<Impl>(std::move(config), overrides)) {}

Orchestrator::~Orchestrator() = default;

const WorkflowGraph& Orchestrator::graph() const { return impl_->graph; }

RunReport Orchestrator::run() { return impl_->run(); }

RunReport Orchestrator::resume(const std::string& output_dir) {
  const fs::path state_path = fs::path(output_dir) / "state.json";
  std::ifstream in(state_path);
  if (!in) {
    throw std::runtime_error("no resumable state at " + state_path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("corrupt state snapshot: " + std::string(e.what()));
  }
  RunConfig config = run_config_from_json(doc.at("config"));
  if (config.downstream_backend.kind == "scripted" ||
      config.meta_backend.kind == "scripted") {
    throw std::runtime_error("runs with scripted backends are not resumable");
  }
  config.output_dir = output_dir;  // the directory may have been moved
  Orchestrator orch(std::move(config));
  orch.impl_->load_state(doc);
  return orch.impl_->run();
}

}  // namespace cantante
