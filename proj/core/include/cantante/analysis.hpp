#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cantante/types.hpp"

namespace cantante {

struct SpearmanResult {
  std::optional<double> value;  // unset when undefined
  std::string note;             // reason when unset
};

/// Spearman rank correlation with average-rank tie handling: Pearson
/// correlation of the rank-transformed inputs. Lengths must match and be
/// >= 2 (std::invalid_argument otherwise); a constant input makes the
/// coefficient undefined and is reported as a no-value with a reason.
SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y);

struct MeanStd {
  double mean = 0;
  double std = 0;  // Bessel-corrected (n-1 denominator)
};

/// Throws std::invalid_argument for n < 2.
MeanStd bessel_std(const std::vector<double>& values);

struct AgentCorrelation {
  std::string agent_id;
  std::optional<double> rho;
  std::string note;
  int n_pairs = 0;
};

struct CorrelationReport {
  // Pairing: per agent, each (iteration, config) contributes one point of
  // (per-config mean system score, per-config aggregated credit), pooled
  // across iterations.
  std::vector<AgentCorrelation> per_agent;
};

/// Pure function of the two run files (orchestrator layout). Throws
/// std::runtime_error on missing files or missing columns.
CorrelationReport credit_score_correlation(const std::string& credits_csv_path,
                                           const std::string& history_csv_path);

struct CrossSeedCorrelation {
  std::string agent_id;
  double mean = 0;
  double std = 0;  // defined only for >= 2 seeds
  int n_seeds = 0;
};

/// Cross-seed mean and Bessel-corrected std per agent; seeds whose rho is
/// undefined are skipped for that agent.
std::vector<CrossSeedCorrelation> aggregate_correlations(
    const std::vector<CorrelationReport>& per_seed);

struct TokenBreakdown {
  TokenTriple downstream;
  TokenTriple optimizer;
  TokenTriple attribution;
  std::int64_t grand_total = 0;
  double meta_fraction = 0;  // (optimizer + attribution) / grand total
};

TokenBreakdown token_breakdown(const std::string& ledger_csv_path);

struct CurvePoint {
  int iteration = 0;
  double best_so_far = 0;  // max mean dev score recorded up to this iteration
};

std::vector<CurvePoint> best_so_far_curve(const std::string& history_csv_path);

/// cmd_analyze outputs: correlation.csv, tokens_summary.csv, curve.csv
void write_correlation_csv(const std::string& path, const CorrelationReport& report);
void write_tokens_summary_csv(const std::string& path, const TokenBreakdown& breakdown);
void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

}  // namespace cantante
