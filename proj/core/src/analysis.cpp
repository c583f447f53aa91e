#include "cantante/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cantante/csv.hpp"

namespace cantante {

namespace {

// average ranks, 1-based; ties share the mean of the positions they occupy
std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("spearman: length mismatch");
  }
  if (x.size() < 2) {
    throw std::invalid_argument("spearman: need at least 2 observations");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);

  const double n = static_cast<double>(rx.size());
  double mean_x = 0;
  double mean_y = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mean_x += rx[i];
    mean_y += ry[i];
  }
  mean_x /= n;
  mean_y /= n;

  double sxy = 0;
  double sxx = 0;
  double syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean_x;
    const double dy = ry[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 && syy == 0) {
    return {std::nullopt, "both inputs constant"};
  }
  if (sxx == 0) return {std::nullopt, "first input constant"};
  if (syy == 0) return {std::nullopt, "second input constant"};
  // sqrt of the product, not the product of sqrts: keeps +-1 exact for
  // perfectly (anti)aligned rankings
  return {sxy / std::sqrt(sxx * syy), ""};
}

MeanStd bessel_std(const std::vector<double>& values) {
  if (values.size() < 2) {
    throw std::invalid_argument("bessel_std: need at least 2 values");
  }
  const double n = static_cast<double>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

namespace {

std::vector<std::vector<std::string>> read_table(const std::string& path,
                                                 const std::vector<std::string>& columns) {
  const auto rows = read_csv_file(path);
  if (rows.empty()) throw std::runtime_error(path + ": empty file");
  const auto& header = rows[0];
  for (const auto& col : columns) {
    if (std::find(header.begin(), header.end(), col) == header.end()) {
      throw std::runtime_error(path + ": missing column '" + col + "'");
    }
  }
  return rows;
}

std::size_t column_of(const std::vector<std::string>& header, const std::string& name) {
  return static_cast<std::size_t>(
      std::find(header.begin(), header.end(), name) - header.begin());
}

}  // namespace

CorrelationReport credit_score_correlation(const std::string& credits_csv_path,
                                           const std::string& history_csv_path) {
  const auto credits =
      read_table(credits_csv_path, {"iteration", "query", "agent", "config", "credit"});
  const auto history = read_table(history_csv_path, {"iteration", "config", "mean_dev_score"});

  // (iteration, config) -> mean dev score
  std::map<std::pair<int, int>, double> score_of;
  {
    const auto& header = history[0];
    const auto it_col = column_of(header, "iteration");
    const auto cfg_col = column_of(header, "config");
    const auto score_col = column_of(header, "mean_dev_score");
    for (std::size_t i = 1; i < history.size(); ++i) {
      score_of[{static_cast<int>(parse_int(history[i][it_col])),
                static_cast<int>(parse_int(history[i][cfg_col]))}] =
          parse_double(history[i][score_col]);
    }
  }

  // aggregated credit per (agent, iteration, config): mean over queries
  std::map<std::string, std::map<std::pair<int, int>, std::pair<double, int>>> sums;
  {
    const auto& header = credits[0];
    const auto it_col = column_of(header, "iteration");
    const auto agent_col = column_of(header, "agent");
    const auto cfg_col = column_of(header, "config");
    const auto credit_col = column_of(header, "credit");
    for (std::size_t i = 1; i < credits.size(); ++i) {
      const int iter = static_cast<int>(parse_int(credits[i][it_col]));
      const int cfg = static_cast<int>(parse_int(credits[i][cfg_col]));
      auto& [sum, count] = sums[credits[i][agent_col]][{iter, cfg}];
      sum += parse_double(credits[i][credit_col]);
      ++count;
    }
  }

  CorrelationReport report;
  for (const auto& [agent, cells] : sums) {
    std::vector<double> scores;
    std::vector<double> agg_credits;
    for (const auto& [key, sum_count] : cells) {
      auto it = score_of.find(key);
      if (it == score_of.end()) continue;
      scores.push_back(it->second);
      agg_credits.push_back(sum_count.first / sum_count.second);
    }
    AgentCorrelation ac;
    ac.agent_id = agent;
    ac.n_pairs = static_cast<int>(scores.size());
    if (scores.size() < 2) {
      ac.note = "fewer than 2 pairs";
    } else {
      const SpearmanResult r = spearman(scores, agg_credits);
      ac.rho = r.value;
      ac.note = r.note;
    }
    report.per_agent.push_back(std::move(ac));
  }
  return report;
}

std::vector<CrossSeedCorrelation> aggregate_correlations(
    const std::vector<CorrelationReport>& per_seed) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& report : per_seed) {
    for (const auto& ac : report.per_agent) {
      if (ac.rho) values[ac.agent_id].push_back(*ac.rho);
    }
  }
  std::vector<CrossSeedCorrelation> out;
  for (const auto& [agent, rhos] : values) {
    CrossSeedCorrelation c;
    c.agent_id = agent;
    c.n_seeds = static_cast<int>(rhos.size());
    if (rhos.size() >= 2) {
      const MeanStd ms = bessel_std(rhos);
      c.mean = ms.mean;
      c.std = ms.std;
    } else {
      c.mean = rhos.empty() ? 0.0 : rhos[0];
      c.std = 0.0;
    }
    out.push_back(std::move(c));
  }
  return out;
}

TokenBreakdown token_breakdown(const std::string& ledger_csv_path) {
  const auto rows = read_table(ledger_csv_path, {"category", "input", "output"});
  const auto& header = rows[0];
  const auto cat_col = column_of(header, "category");
  const auto in_col = column_of(header, "input");
  const auto out_col = column_of(header, "output");

  TokenBreakdown b;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const TokenTriple t =
        TokenTriple::of(parse_int(rows[i][in_col]), parse_int(rows[i][out_col]));
    const std::string& cat = rows[i][cat_col];
    if (cat == "downstream") {
      b.downstream += t;
    } else if (cat == "optimizer") {
      b.optimizer += t;
    } else if (cat == "attribution") {
      b.attribution += t;
    } else {
      throw std::runtime_error(ledger_csv_path + ": unknown category '" + cat + "'");
    }
  }
  b.grand_total = b.downstream.total + b.optimizer.total + b.attribution.total;
  b.meta_fraction =
      b.grand_total == 0
          ? 0.0
          : static_cast<double>(b.optimizer.total + b.attribution.total) /
                static_cast<double>(b.grand_total);
  return b;
}

std::vector<CurvePoint> best_so_far_curve(const std::string& history_csv_path) {
  const auto rows = read_table(history_csv_path, {"iteration", "config", "mean_dev_score"});
  const auto& header = rows[0];
  const auto it_col = column_of(header, "iteration");
  const auto score_col = column_of(header, "mean_dev_score");

  std::map<int, double> best_of_iter;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const int iter = static_cast<int>(parse_int(rows[i][it_col]));
    const double score = parse_double(rows[i][score_col]);
    auto [it, inserted] = best_of_iter.emplace(iter, score);
    if (!inserted && score > it->second) it->second = score;
  }

  std::vector<CurvePoint> curve;
  double best = -1;
  for (const auto& [iter, score] : best_of_iter) {
    best = std::max(best, score);
    curve.push_back({iter, best});
  }
  return curve;
}

void write_correlation_csv(const std::string& path, const CorrelationReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_csv_row(out, {"agent", "rho", "n_pairs", "note"});
  for (const auto& ac : report.per_agent) {
    write_csv_row(out, {ac.agent_id, ac.rho ? format_double(*ac.rho) : std::string{},
                        format_int(ac.n_pairs), ac.note});
  }
}

void write_tokens_summary_csv(const std::string& path, const TokenBreakdown& b) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_csv_row(out, {"category", "input", "output", "total"});
  write_csv_row(out, {"downstream", format_int(b.downstream.input),
                      format_int(b.downstream.output), format_int(b.downstream.total)});
  write_csv_row(out, {"optimizer", format_int(b.optimizer.input),
                      format_int(b.optimizer.output), format_int(b.optimizer.total)});
  write_csv_row(out, {"attribution", format_int(b.attribution.input),
                      format_int(b.attribution.output), format_int(b.attribution.total)});
  write_csv_row(out, {"meta_fraction", format_double(b.meta_fraction), "", ""});
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_csv_row(out, {"iteration", "best_so_far_dev_score"});
  for (const auto& p : curve) {
    write_csv_row(out, {format_int(p.iteration), format_double(p.best_so_far)});
  }
}

}  // namespace cantante
