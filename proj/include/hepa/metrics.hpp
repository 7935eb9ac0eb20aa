#pragma once

// Evaluation over the probability surface p(t, dt): horizon-averaged AUROC,
// point-estimate and threshold projections, calibration.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hepa {

struct SurfaceRow {
  std::string episode;
  std::int64_t t = 0;
  std::vector<double> p;  // cumulative event probability for dt = 1..K
  std::vector<std::uint8_t> y;
  std::vector<std::uint8_t> mask;
};

struct ProbabilitySurface {
  int K = 0;
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<SurfaceRow> rows;
};

// Checks row widths, p in [0, 1], p non-decreasing in dt and y cumulative
// within the valid mask. Throws ContractError naming the first violation.
void validate_surface(const ProbabilitySurface& s);

// Probability that a random positive outscores a random negative, ties count
// one half. Empty when either class is missing.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct HorizonStat {
  int dt = 0;
  std::optional<double> auroc;  // empty for skipped horizons
  double prevalence = 0.0;
  std::int64_t n = 0;
};

struct HAuroc {
  std::optional<double> value;  // empty when no horizon is retained
  std::vector<HorizonStat> per_horizon;
  int n_valid_horizons = 0;
};

inline constexpr double kMinPrevalence = 0.001;
inline constexpr double kMaxPrevalence = 0.999;

HAuroc h_auroc(const ProbabilitySurface& s);

// E[dt] with P(dt) = p(dt) - p(dt-1) and the survival mass 1 - p(K) placed
// at K + 1.
double expected_event_time(std::span<const double> p);
// RMSE of expected_event_time against `truth` (one entry per row).
double rmse_projection(const ProbabilitySurface& s, const std::vector<double>& truth);

double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);
// F1 of the rule p(t, horizon) >= threshold over valid cells.
double threshold_f1(const ProbabilitySurface& s, int horizon, double threshold);
// Best of 101 evenly spaced thresholds in [0, 1] (first on ties).
double select_threshold(const ProbabilitySurface& s, int horizon);

struct PaF1 {
  double pa_f1 = 0.0;
  double non_pa_f1 = 0.0;
};

// Per-step scores and labels of one ordered sequence; true segments are runs
// of positive labels.
PaF1 pa_f1_sequence(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold);
// Uses the dt = 1 track of each episode ordered by t.
PaF1 pa_f1(const ProbabilitySurface& s, double threshold);

struct Calibration {
  double ece = 0.0;
  double brier = 0.0;
  double reliability = 0.0;
  double resolution = 0.0;
  double uncertainty = 0.0;
  std::int64_t n = 0;
};

// Ten equal-width bins over all valid cells. Reliability is the binned Brier
// excess over within-bin outcome variance, so Brier = Rel - Res + Unc holds
// exactly.
Calibration calibration(const ProbabilitySurface& s, int bins = 10);

struct EvalOptions {
  double threshold = 0.5;
  int f1_horizon = 0;  // 0: use K
  std::optional<std::vector<double>> time_to_event;  // per row, for the RMSE projection
};

struct MetricReport {
  std::optional<double> h_auroc;
  std::vector<HorizonStat> per_horizon;
  int n_valid_horizons = 0;
  std::optional<double> rmse;
  double threshold = 0.5;
  int f1_horizon = 0;
  double f1 = 0.0;
  double pa_f1 = 0.0;
  double non_pa_f1 = 0.0;
  Calibration calib;
};

MetricReport evaluate_surface(const ProbabilitySurface& s, const EvalOptions& opts);

}  // namespace hepa
