#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cantante/cli.hpp"
#include "helpers.hpp"

using namespace cantante;
using namespace cantante::testing;

namespace {

namespace fs = std::filesystem;

std::string write_config(const std::string& name, const nlohmann::json& doc) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream out(path, std::ios::trunc);
  out << doc.dump(2);
  return path.string();
}

nlohmann::json base_config(const std::string& out_tag) {
  const std::string out_dir = (fs::temp_directory_path() / ("cant_cli_" + out_tag)).string();
  fs::remove_all(out_dir);
  return nlohmann::json{{"task", {{"kind", "synthetic"}, {"n_agents", 2}, {"n_queries", 6}}},
                        {"downstream_backend", {{"kind", "synthetic"}}},
                        {"meta_backend", {{"kind", "synthetic"}}},
                        {"k_configurations", 9},
                        {"group_size", 3},
                        {"max_iterations", 2},
                        {"token_budget", 10000000},
                        {"seed", 42},
                        {"attributer", "oracle"},
                        {"optimizer", "evolutionary"},
                        {"population_size", 6},
                        {"output_dir", out_dir},
                        {"workers", 2},
                        {"retry_base_delay_ms", 0}};
}

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("cmd_run executes a synthetic config and prints the summary block") {
  const auto doc = base_config("run");
  const std::string config = write_config("cant_cli_run.json", doc);
  const CliResult result = cli({"run", "--config", config});
  CHECK(result.exit_code == 0);
  CHECK(contains(result.out, "status: completed"));
  CHECK(contains(result.out, "iterations: 2"));
  CHECK(contains(result.out, "best_dev_score:"));
  CHECK(contains(result.out, "tokens_total:"));
  CHECK(fs::exists(doc.at("output_dir").get<std::string>() + "/history.csv"));
  CHECK(fs::exists(doc.at("output_dir").get<std::string>() + "/best_config"));
}

TEST_CASE("cmd_run override seed=7 is recorded in the run state") {
  auto doc = base_config("ovr");
  const std::string config = write_config("cant_cli_ovr.json", doc);
  const CliResult result = cli({"run", "--config", config, "--override", "seed=7",
                                "--override", "max_iterations=1"});
  CHECK(result.exit_code == 0);
  std::ifstream in(doc.at("output_dir").get<std::string>() + "/state.json");
  const auto state = nlohmann::json::parse(in);
  CHECK(state.at("config").at("seed") == 7);
  CHECK(state.at("config").at("max_iterations") == 1);
}

TEST_CASE("cmd_run with a missing dataset names the path and exits 1") {
  auto doc = base_config("missing");
  doc["task"] = {{"kind", "file"},
                 {"graph", "/nonexistent/graph.json"},
                 {"dataset", "/nonexistent/data.jsonl"},
                 {"scorer", "exact_match"}};
  const std::string config = write_config("cant_cli_missing.json", doc);
  const CliResult result = cli({"run", "--config", config});
  CHECK(result.exit_code == 2);
  CHECK(contains(result.err, "/nonexistent/graph.json"));
}

TEST_CASE("cmd_run with an unreadable config exits 2") {
  const CliResult result = cli({"run", "--config", "/nonexistent/conf.json"});
  CHECK(result.exit_code == 2);
  CHECK(contains(result.err, "/nonexistent/conf.json"));
}

TEST_CASE("cmd_run rejects bad overrides with exit 2") {
  const auto doc = base_config("badovr");
  const std::string config = write_config("cant_cli_badovr.json", doc);
  const CliResult result = cli({"run", "--config", config, "--override", "nope=1"});
  CHECK(result.exit_code == 2);
}

TEST_CASE("cmd_validate: clean graph exits 0 with '0 violations'") {
  const auto doc = base_config("val");
  const std::string config = write_config("cant_cli_val.json", doc);
  const CliResult result = cli({"validate", "--config", config});
  CHECK(result.exit_code == 0);
  CHECK(contains(result.out, "0 violations"));
}

TEST_CASE("cmd_validate: uncapped cycle exits 1 and lists the violation") {
  // a file task pointing at a graph with an uncapped cycle
  nlohmann::json graph{
      {"agents",
       {{{"id", "a"}, {"input_variables", {"x"}}, {"output_tag", "t"}},
        {{"id", "b"}, {"input_variables", {"x"}}, {"output_tag", "t"}}}},
      {"edges",
       {{{"id", "e1"}, {"from", "a"}, {"to", "b"}, {"carries", {{"output", "x"}}}},
        {{"id", "e2"}, {"from", "b"}, {"to", "a"}, {"carries", {{"output", "x"}}}}}},
      {"entry", "a"},
      {"terminals", {"b"}}};
  const auto graph_path = fs::temp_directory_path() / "cant_cli_cycle.json";
  std::ofstream(graph_path) << graph.dump();

  auto doc = base_config("valbad");
  doc["task"] = {{"kind", "file"},
                 {"graph", graph_path.string()},
                 {"dataset", "unused.jsonl"},
                 {"scorer", "exact_match"}};
  const std::string config = write_config("cant_cli_valbad.json", doc);
  const CliResult result = cli({"validate", "--config", config});
  CHECK(result.exit_code == 1);
  CHECK(contains(result.out, "uncapped cycle"));
}

TEST_CASE("cmd_validate: nonexistent file exits 2") {
  const CliResult result = cli({"validate", "--config", "/nonexistent/x.json"});
  CHECK(result.exit_code == 2);
}

TEST_CASE("cmd_analyze on a finished run emits csv outputs and the rho table") {
  auto doc = base_config("analyze");
  doc["attributer"] = "identity";
  const std::string config = write_config("cant_cli_analyze.json", doc);
  REQUIRE(cli({"run", "--config", config}).exit_code == 0);

  const std::string out_dir = doc.at("output_dir").get<std::string>();
  const CliResult result = cli({"analyze", out_dir});
  CHECK(result.exit_code == 0);
  CHECK(contains(result.out, "meta_fraction:"));
  CHECK(contains(result.out, "agent rho"));
  CHECK(fs::exists(out_dir + "/correlation.csv"));
  CHECK(fs::exists(out_dir + "/tokens_summary.csv"));
  CHECK(fs::exists(out_dir + "/curve.csv"));

  // identity attribution: rho = 1 for every agent
  std::istringstream lines(result.out);
  std::string line;
  int rho_rows = 0;
  bool in_table = false;
  while (std::getline(lines, line)) {
    if (line == "agent rho") {
      in_table = true;
      continue;
    }
    if (in_table && line.rfind("agent", 0) == 0) {
      const auto space = line.find(' ');
      CHECK(parse_double(line.substr(space + 1)) == doctest::Approx(1.0).epsilon(1e-12));
      ++rho_rows;
    }
  }
  CHECK(rho_rows == 2);
}

TEST_CASE("cmd_analyze on an empty directory fails nonzero") {
  const std::string empty = (fs::temp_directory_path() / "cant_cli_empty").string();
  fs::remove_all(empty);
  fs::create_directories(empty);
  const CliResult result = cli({"analyze", empty});
  CHECK(result.exit_code == 2);
}

TEST_CASE("cmd_resume without a snapshot fails with exit 2") {
  const std::string empty = (fs::temp_directory_path() / "cant_cli_resume_empty").string();
  fs::remove_all(empty);
  fs::create_directories(empty);
  const CliResult result = cli({"resume", empty});
  CHECK(result.exit_code == 2);
}

TEST_CASE("cmd_resume re-emits the report of a finished run") {
  auto doc = base_config("resume");
  const std::string config = write_config("cant_cli_resume.json", doc);
  const CliResult first = cli({"run", "--config", config});
  REQUIRE(first.exit_code == 0);
  const CliResult second = cli({"resume", doc.at("output_dir").get<std::string>()});
  CHECK(second.exit_code == 0);
  CHECK(second.out == first.out);
}

TEST_CASE("console output is stable across identical runs (golden transcript)") {
  auto doc_a = base_config("gold-a");
  auto doc_b = base_config("gold-b");
  const std::string out_a = doc_a.at("output_dir");
  const std::string out_b = doc_b.at("output_dir");
  const CliResult a = cli({"run", "--config", write_config("cant_cli_ga.json", doc_a)});
  const CliResult b = cli({"run", "--config", write_config("cant_cli_gb.json", doc_b)});
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  // identical up to the differing output directory
  std::string norm_a = a.out.substr(0, a.out.find("output_dir:"));
  std::string norm_b = b.out.substr(0, b.out.find("output_dir:"));
  CHECK(norm_a == norm_b);

  const CliResult analyze_a = cli({"analyze", out_a});
  const CliResult analyze_b = cli({"analyze", out_b});
  std::string an_a = analyze_a.out.substr(analyze_a.out.find("meta_fraction"));
  std::string an_b = analyze_b.out.substr(analyze_b.out.find("meta_fraction"));
  CHECK(an_a == an_b);
}

TEST_CASE("unknown command and missing arguments exit nonzero") {
  CHECK(cli({"frob"}).exit_code != 0);
  CHECK(cli({}).exit_code != 0);
  CHECK(cli({"run"}).exit_code != 0);
}
