#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cantante/analysis.hpp"
#include "cantante/csv.hpp"
#include "cantante/orchestrator.hpp"
#include "cantante/rng.hpp"
#include "helpers.hpp"

using namespace cantante;
using namespace cantante::testing;

namespace {

namespace fs = std::filesystem;

// brute-force oracle: O(n^2) average ranks, then textbook Pearson
std::vector<double> oracle_ranks(const std::vector<double>& v) {
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;  // includes i itself
    }
    ranks[i] = less + (equal + 1.0) / 2.0;
  }
  return ranks;
}

double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = oracle_ranks(x);
  const auto ry = oracle_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::string write_rows(const std::string& name,
                       const std::vector<std::vector<std::string>>& rows) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream out(path, std::ios::trunc);
  for (const auto& row : rows) write_csv_row(out, row);
  return path.string();
}

}  // namespace

TEST_CASE("spearman on perfectly aligned and reversed rankings is exact") {
  const SpearmanResult up = spearman({0.1, 0.5, 0.9}, {1, 2, 3});
  REQUIRE(up.value.has_value());
  CHECK(*up.value == 1.0);

  const SpearmanResult down = spearman({0.9, 0.5, 0.1}, {1, 2, 3});
  REQUIRE(down.value.has_value());
  CHECK(*down.value == -1.0);
}

TEST_CASE("spearman tie handling matches the brute-force oracle") {
  const std::vector<double> x{1, 2, 2, 4};
  const std::vector<double> y{1, 3, 2, 4};
  const SpearmanResult r = spearman(x, y);
  REQUIRE(r.value.has_value());
  CHECK(*r.value == doctest::Approx(oracle_spearman(x, y)).epsilon(1e-12));
}

TEST_CASE("spearman error and degenerate cases") {
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(spearman({1}, {1}), std::invalid_argument);
  const SpearmanResult constant = spearman({2, 2, 2}, {1, 2, 3});
  CHECK_FALSE(constant.value.has_value());
  CHECK_FALSE(constant.note.empty());
}

TEST_CASE("spearman is invariant under strictly increasing transforms") {
  SeedStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.next_below(20);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.next_below(8));  // ties likely
      y[i] = static_cast<double>(rng.next_below(8));
    }
    const SpearmanResult base = spearman(x, y);
    if (!base.value) continue;

    std::vector<double> tx(n), ty(n);
    for (std::size_t i = 0; i < n; ++i) {
      tx[i] = std::exp(x[i] / 3.0) + 5.0;         // strictly increasing
      ty[i] = y[i] * y[i] * y[i] + 0.5 * y[i];    // strictly increasing on ints
    }
    const SpearmanResult transformed = spearman(tx, ty);
    REQUIRE(transformed.value.has_value());
    CHECK(*transformed.value == doctest::Approx(*base.value).epsilon(1e-12));
  }
}

TEST_CASE("bessel_std exact values and errors") {
  const MeanStd simple = bessel_std({1, 2, 3});
  CHECK(simple.mean == 2.0);
  CHECK(simple.std == 1.0);

  const MeanStd flat = bessel_std({5, 5, 5});
  CHECK(flat.mean == 5.0);
  CHECK(flat.std == 0.0);

  CHECK_THROWS_AS(bessel_std({1}), std::invalid_argument);
  CHECK_THROWS_AS(bessel_std({}), std::invalid_argument);
}

TEST_CASE("bessel_std matches a two-pass oracle and scales linearly") {
  SeedStream rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.next_below(30);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_unit() * 10 - 5;

    const MeanStd ms = bessel_std(v);
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double expected = std::sqrt(ss / (static_cast<double>(n) - 1));
    CHECK(ms.std == doctest::Approx(expected).epsilon(1e-12));

    const double c = 2.5;
    std::vector<double> scaled = v;
    for (auto& x : scaled) x *= c;
    CHECK(bessel_std(scaled).std == doctest::Approx(c * ms.std).epsilon(1e-12));
  }
}

TEST_CASE("credit_score_correlation: identity credits give rho = 1 per agent") {
  // identity: credit = 2*score - 1, so per-agent aggregated credits are a
  // strictly increasing function of the per-config mean scores
  const auto history = write_rows(
      "cant_hist1.csv", {{"iteration", "config", "mean_dev_score"},
                         {"1", "1", "0.25"},
                         {"1", "2", "0.5"},
                         {"1", "3", "0.75"},
                         {"2", "1", "0.5"},
                         {"2", "2", "0.1"},
                         {"2", "3", "0.9"}});
  std::vector<std::vector<std::string>> credit_rows{
      {"iteration", "query", "agent", "config", "credit", "status"}};
  for (int iter = 1; iter <= 2; ++iter) {
    for (int config = 1; config <= 3; ++config) {
      const double score =
          iter == 1 ? 0.25 * config
                    : (config == 1 ? 0.5 : (config == 2 ? 0.1 : 0.9));
      for (const char* agent : {"planner", "executor"}) {
        // two queries with credits averaging to 2*score-1
        credit_rows.push_back({std::to_string(iter), "q1", agent, std::to_string(config),
                               format_double(2 * score - 1 + 0.05), "attributed"});
        credit_rows.push_back({std::to_string(iter), "q2", agent, std::to_string(config),
                               format_double(2 * score - 1 - 0.05), "attributed"});
      }
    }
  }
  const auto credits = write_rows("cant_cred1.csv", credit_rows);

  const CorrelationReport report = credit_score_correlation(credits, history);
  REQUIRE(report.per_agent.size() == 2);
  for (const auto& ac : report.per_agent) {
    REQUIRE(ac.rho.has_value());
    CHECK(*ac.rho == 1.0);
    CHECK(ac.n_pairs == 6);
  }
}

TEST_CASE("credit_score_correlation: shuffled credits give near-zero rho") {
  SeedStream rng(33);
  std::vector<std::vector<std::string>> history_rows{
      {"iteration", "config", "mean_dev_score"}};
  std::vector<std::vector<std::string>> credit_rows{
      {"iteration", "query", "agent", "config", "credit", "status"}};
  std::vector<double> credits_pool;
  const int iters = 10, k = 9;
  for (int t = 1; t <= iters; ++t) {
    for (int c = 1; c <= k; ++c) {
      history_rows.push_back(
          {std::to_string(t), std::to_string(c), format_double(rng.next_unit())});
      credits_pool.push_back(rng.next_unit() * 2 - 1);
    }
  }
  deterministic_shuffle(credits_pool, rng);  // break any accidental alignment
  std::size_t at = 0;
  for (int t = 1; t <= iters; ++t) {
    for (int c = 1; c <= k; ++c) {
      credit_rows.push_back({std::to_string(t), "q1", "a", std::to_string(c),
                             format_double(credits_pool[at++]), "attributed"});
    }
  }
  const auto history = write_rows("cant_hist2.csv", history_rows);
  const auto credits = write_rows("cant_cred2.csv", credit_rows);
  const CorrelationReport report = credit_score_correlation(credits, history);
  REQUIRE(report.per_agent.size() == 1);
  REQUIRE(report.per_agent[0].rho.has_value());
  CHECK(std::fabs(*report.per_agent[0].rho) < 0.35);  // null baseline stays small
}

TEST_CASE("credit_score_correlation requires the documented columns") {
  const auto bad_history =
      write_rows("cant_hist3.csv", {{"iteration", "config"}, {"1", "1"}});
  const auto credits = write_rows(
      "cant_cred3.csv",
      {{"iteration", "query", "agent", "config", "credit", "status"}});
  CHECK_THROWS_WITH_AS(credit_score_correlation(credits, bad_history),
                       doctest::Contains("mean_dev_score"), std::runtime_error);
  CHECK_THROWS_AS(credit_score_correlation("/nonexistent.csv", bad_history),
                  std::runtime_error);
}

TEST_CASE("credit_score_correlation is a pure function of its input files") {
  RunConfig config;
  config.task.kind = "synthetic";
  config.task.n_agents = 2;
  config.task.n_queries = 6;
  config.max_iterations = 2;
  config.attributer = AttributerKind::Oracle;
  config.retry_base_delay_ms = 0;
  config.workers = 2;
  config.seed = 3;
  config.output_dir = (fs::temp_directory_path() / "cant_pure").string();
  fs::remove_all(config.output_dir);
  Orchestrator(config).run();

  const std::string credits = config.output_dir + "/credits.csv";
  const std::string history = config.output_dir + "/history.csv";
  const CorrelationReport a = credit_score_correlation(credits, history);
  const CorrelationReport b = credit_score_correlation(credits, history);
  REQUIRE(a.per_agent.size() == b.per_agent.size());
  for (std::size_t i = 0; i < a.per_agent.size(); ++i) {
    CHECK(a.per_agent[i].agent_id == b.per_agent[i].agent_id);
    CHECK(a.per_agent[i].rho == b.per_agent[i].rho);
  }
}

TEST_CASE("token_breakdown: meta fraction and exact sums") {
  SUBCASE("downstream 300, optimizer 50, attribution 50 -> 0.25") {
    const auto ledger = write_rows("cant_led1.csv", {{"category", "input", "output"},
                                                     {"downstream", "200", "100"},
                                                     {"optimizer", "30", "20"},
                                                     {"attribution", "40", "10"}});
    const TokenBreakdown b = token_breakdown(ledger);
    CHECK(b.grand_total == 400);
    CHECK(b.meta_fraction == 0.25);
  }
  SUBCASE("identity run: attribution 0, fraction is the optimizer share") {
    const auto ledger = write_rows("cant_led2.csv", {{"category", "input", "output"},
                                                     {"downstream", "60", "20"},
                                                     {"optimizer", "15", "5"},
                                                     {"attribution", "0", "0"}});
    const TokenBreakdown b = token_breakdown(ledger);
    CHECK(b.attribution.total == 0);
    CHECK(b.meta_fraction == doctest::Approx(20.0 / 100.0));
  }
  SUBCASE("category sums equal the grand total") {
    const auto ledger = write_rows("cant_led3.csv", {{"category", "input", "output"},
                                                     {"downstream", "7", "3"},
                                                     {"optimizer", "2", "1"},
                                                     {"attribution", "4", "4"}});
    const TokenBreakdown b = token_breakdown(ledger);
    CHECK(b.downstream.total + b.optimizer.total + b.attribution.total == b.grand_total);
    CHECK(b.grand_total == 21);
  }
}

TEST_CASE("best_so_far_curve is non-decreasing and tracks the running max") {
  const auto history = write_rows("cant_hist4.csv",
                                  {{"iteration", "config", "mean_dev_score"},
                                   {"1", "1", "0.2"},
                                   {"1", "2", "0.5"},
                                   {"2", "1", "0.3"},
                                   {"2", "2", "0.4"},
                                   {"3", "1", "0.9"}});
  const auto curve = best_so_far_curve(history);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].best_so_far == 0.5);
  CHECK(curve[1].best_so_far == 0.5);
  CHECK(curve[2].best_so_far == 0.9);
}

TEST_CASE("aggregate_correlations: cross-seed mean and std use Bessel") {
  CorrelationReport seed1, seed2, seed3;
  seed1.per_agent = {{"a", 1.0, "", 9}};
  seed2.per_agent = {{"a", 2.0, "", 9}};
  seed3.per_agent = {{"a", 3.0, "", 9}};
  const auto cross = aggregate_correlations({seed1, seed2, seed3});
  REQUIRE(cross.size() == 1);
  CHECK(cross[0].n_seeds == 3);
  CHECK(cross[0].mean == 2.0);
  CHECK(cross[0].std == 1.0);
}

TEST_CASE("analysis csv writers produce the documented files") {
  CorrelationReport report;
  report.per_agent = {{"planner", 0.5, "", 6}, {"executor", std::nullopt, "constant", 6}};
  const auto corr_path = (fs::temp_directory_path() / "cant_out_corr.csv").string();
  write_correlation_csv(corr_path, report);
  const auto rows = read_csv_file(corr_path);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"agent", "rho", "n_pairs", "note"});
  CHECK(rows[1][0] == "planner");
  CHECK(rows[2][3] == "constant");
}
