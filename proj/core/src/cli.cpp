#include "cantante/cli.hpp"

#include <filesystem>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "cantante/analysis.hpp"
#include "cantante/csv.hpp"
#include "cantante/graph.hpp"
#include "cantante/orchestrator.hpp"

namespace cantante {

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kDomainFailure = 1;
constexpr int kIoFailure = 2;

void print_report(const RunReport& report, std::ostream& out) {
  out << "status: " << (report.budget_exhausted ? "budget-exhausted" : "completed") << "\n"
      << "iterations: " << report.iterations << "\n"
      << "best_iteration: " << report.best.iteration << "\n"
      << "best_config: " << report.best.config_index << "\n"
      << "best_dev_score: " << format_double(report.best.score) << "\n"
      << "tokens_downstream: " << report.downstream.total << "\n"
      << "tokens_optimizer: " << report.optimizer.total << "\n"
      << "tokens_attribution: " << report.attribution.total << "\n"
      << "tokens_total: " << report.grand_total << "\n"
      << "parse_failed_credits: " << report.parse_failed_credits << "\n"
      << "output_dir: " << report.output_dir << "\n";
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            std::ostream& out, std::ostream& err) {
  RunConfig config;
  try {
    config = load_run_config(config_path);
    for (const auto& ov : overrides) {
      const std::size_t eq = ov.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("override must look like key=value: " + ov);
      }
      apply_override(config, ov.substr(0, eq), ov.substr(eq + 1));
    }
    validate_run_config(config);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kIoFailure;
  }

  try {
    Orchestrator orchestrator(std::move(config));
    const RunReport report = orchestrator.run();
    print_report(report, out);
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << "\n";
    return kDomainFailure;
  }
}

int cmd_resume(const std::string& run_dir, std::ostream& out, std::ostream& err) {
  if (!fs::exists(fs::path(run_dir) / "state.json")) {
    err << "no state snapshot in " << run_dir << "\n";
    return kIoFailure;
  }
  try {
    const RunReport report = Orchestrator::resume(run_dir);
    print_report(report, out);
    return kOk;
  } catch (const std::exception& e) {
    err << "resume failed: " << e.what() << "\n";
    return kDomainFailure;
  }
}

int cmd_validate(const std::string& config_path, std::ostream& out, std::ostream& err) {
  WorkflowGraph graph;
  try {
    const RunConfig config = load_run_config(config_path);
    if (config.task.kind == "synthetic") {
      graph = make_synthetic_task(config.task.n_agents, config.task.n_queries, config.seed)
                  .graph;
    } else {
      graph = load_graph_file(config.task.graph_path);
    }
  } catch (const std::exception& e) {
    err << "cannot load: " << e.what() << "\n";
    return kIoFailure;
  }

  const auto violations = validate_graph(graph);
  out << violations.size() << " violations\n";
  for (const auto& v : violations) {
    out << v.where << ": " << v.message << "\n";
  }
  return violations.empty() ? kOk : kDomainFailure;
}

int cmd_analyze(const std::vector<std::string>& run_dirs, std::ostream& out,
                std::ostream& err) {
  std::vector<CorrelationReport> reports;
  for (const auto& dir : run_dirs) {
    const std::string history = (fs::path(dir) / "history.csv").string();
    const std::string credits = (fs::path(dir) / "credits.csv").string();
    const std::string ledger = (fs::path(dir) / "ledger.csv").string();
    try {
      const TokenBreakdown breakdown = token_breakdown(ledger);
      const CorrelationReport report = credit_score_correlation(credits, history);
      const auto curve = best_so_far_curve(history);

      write_correlation_csv((fs::path(dir) / "correlation.csv").string(), report);
      write_tokens_summary_csv((fs::path(dir) / "tokens_summary.csv").string(), breakdown);
      write_curve_csv((fs::path(dir) / "curve.csv").string(), curve);

      out << "run_dir: " << dir << "\n";
      out << "meta_fraction: " << format_double(breakdown.meta_fraction) << "\n";
      out << "agent rho\n";
      for (const auto& ac : report.per_agent) {
        out << ac.agent_id << " "
            << (ac.rho ? format_double(*ac.rho) : "undefined(" + ac.note + ")") << "\n";
      }
      reports.push_back(report);
    } catch (const std::exception& e) {
      err << "analyze failed for " << dir << ": " << e.what() << "\n";
      return kIoFailure;
    }
  }

  if (reports.size() > 1) {
    out << "cross-seed (" << reports.size() << " runs)\n";
    out << "agent mean_rho std_rho\n";
    for (const auto& c : aggregate_correlations(reports)) {
      out << c.agent_id << " " << format_double(c.mean) << " " << format_double(c.std)
          << "\n";
    }
  }
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"credit-assignment-driven optimizer for multi-agent LLM workflows"};
  app.name("cantante");
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;
  std::vector<std::string> analyze_dirs;
  std::string validate_config;

  CLI::App* run_cmd = app.add_subcommand("run", "execute an optimization run");
  run_cmd->add_option("--config", config_path, "run configuration file")->required();
  run_cmd->add_option("--override", overrides, "key=value override of a scalar field");

  CLI::App* resume_cmd = app.add_subcommand("resume", "continue a persisted run");
  resume_cmd->add_option("run_dir", run_dir, "run output directory")->required();

  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "post-hoc statistics over one or more runs");
  analyze_cmd->add_option("run_dir", analyze_dirs, "run output directories")->required();

  CLI::App* validate_cmd = app.add_subcommand("validate", "validate a workflow graph");
  validate_cmd->add_option("--config", validate_config, "run configuration file")->required();

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  storage.insert(storage.begin(), "cantante");
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    std::ostringstream silent;
    app.exit(e, out, err);
    return e.get_name() == "CallForHelp" ? kOk : kIoFailure;
  }

  if (run_cmd->parsed()) return cmd_run(config_path, overrides, out, err);
  if (resume_cmd->parsed()) return cmd_resume(run_dir, out, err);
  if (analyze_cmd->parsed()) return cmd_analyze(analyze_dirs, out, err);
  if (validate_cmd->parsed()) return cmd_validate(validate_config, out, err);
  err << "no command given\n";
  return kIoFailure;
}

}  // namespace cantante
