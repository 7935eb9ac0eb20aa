#include "hepa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hepa/errors.hpp"

namespace hepa {

namespace {

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  void add(bool pred, bool truth) {
    if (pred && truth) ++tp;
    if (pred && !truth) ++fp;
    if (!pred && truth) ++fn;
  }
};

// Raw and point-adjusted confusion counts for one ordered sequence.
std::pair<Counts, Counts> sequence_counts(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                          double threshold) {
  if (scores.size() != labels.size()) throw ShapeError("pa_f1: scores and labels differ in length");
  const auto n = scores.size();
  std::vector<bool> pred(n), adjusted(n);
  for (std::size_t i = 0; i < n; ++i) adjusted[i] = pred[i] = scores[i] >= threshold;
  for (std::size_t i = 0; i < n;) {
    if (!labels[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool hit = false;
    for (; j < n && labels[j]; ++j) hit = hit || pred[j];
    if (hit) std::fill(adjusted.begin() + i, adjusted.begin() + j, true);
    i = j;
  }
  Counts raw, pa;
  for (std::size_t i = 0; i < n; ++i) {
    raw.add(pred[i], labels[i]);
    pa.add(adjusted[i], labels[i]);
  }
  return {raw, pa};
}

}  // namespace

void validate_surface(const ProbabilitySurface& s) {
  if (s.K < 1) throw ContractError("surface: K must be >= 1");
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    const auto& row = s.rows[r];
    const std::string where = "surface row " + std::to_string(r) + " (episode " + row.episode + ", t=" +
                              std::to_string(row.t) + ")";
    if (row.p.size() != static_cast<std::size_t>(s.K) || row.y.size() != row.p.size() ||
        row.mask.size() != row.p.size()) {
      throw ContractError(where + ": expected " + std::to_string(s.K) + " horizons");
    }
    int last_valid_y = 0;
    for (int k = 0; k < s.K; ++k) {
      if (!(row.p[k] >= 0.0 && row.p[k] <= 1.0)) throw ContractError(where + ": p outside [0, 1]");
      if (k > 0 && row.p[k] < row.p[k - 1]) throw ContractError(where + ": p decreases at dt=" + std::to_string(k + 1));
      if (row.mask[k]) {
        if (row.y[k] < last_valid_y) throw ContractError(where + ": labels are not cumulative");
        last_valid_y = row.y[k];
      }
    }
  }
}

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  const auto n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const auto n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

HAuroc h_auroc(const ProbabilitySurface& s) {
  HAuroc out;
  double total = 0.0;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (int k = 0; k < s.K; ++k) {
    scores.clear();
    labels.clear();
    for (const auto& row : s.rows) {
      if (!row.mask[k]) continue;
      scores.push_back(row.p[k]);
      labels.push_back(row.y[k]);
    }
    HorizonStat h;
    h.dt = k + 1;
    h.n = static_cast<std::int64_t>(scores.size());
    const auto pos = std::count(labels.begin(), labels.end(), std::uint8_t{1});
    h.prevalence = h.n > 0 ? static_cast<double>(pos) / static_cast<double>(h.n) : 0.0;
    if (h.n > 0 && h.prevalence >= kMinPrevalence && h.prevalence <= kMaxPrevalence) {
      h.auroc = auroc(scores, labels);
    }
    if (h.auroc) {
      total += *h.auroc;
      ++out.n_valid_horizons;
    }
    out.per_horizon.push_back(h);
  }
  if (out.n_valid_horizons > 0) out.value = total / out.n_valid_horizons;
  return out;
}

double expected_event_time(std::span<const double> p) {
  double tau = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    tau += static_cast<double>(k + 1) * (p[k] - prev);
    prev = p[k];
  }
  return tau + static_cast<double>(p.size() + 1) * (1.0 - prev);
}

double rmse_projection(const ProbabilitySurface& s, const std::vector<double>& truth) {
  if (truth.size() != s.rows.size()) throw ContractError("rmse_projection: one ground-truth time per row required");
  if (s.rows.empty()) throw ContractError("rmse_projection: empty surface");
  double se = 0.0;
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    if (!std::isfinite(truth[r])) throw ContractError("rmse_projection: missing ground truth for row " + std::to_string(r));
    const double err = expected_event_time(s.rows[r].p) - truth[r];
    se += err * err;
  }
  return std::sqrt(se / static_cast<double>(s.rows.size()));
}

double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  const auto denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double threshold_f1(const ProbabilitySurface& s, int horizon, double threshold) {
  if (horizon < 1 || horizon > s.K) throw ContractError("threshold_f1: horizon outside [1, K]");
  Counts c;
  for (const auto& row : s.rows) {
    if (row.mask[horizon - 1]) c.add(row.p[horizon - 1] >= threshold, row.y[horizon - 1]);
  }
  return f1_from_counts(c.tp, c.fp, c.fn);
}

double select_threshold(const ProbabilitySurface& s, int horizon) {
  double best_thr = 0.5, best_f1 = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double thr = i / 100.0;
    const double f1 = threshold_f1(s, horizon, thr);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_thr = thr;
    }
  }
  return best_thr;
}

PaF1 pa_f1_sequence(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
  auto [raw, pa] = sequence_counts(scores, labels, threshold);
  return {f1_from_counts(pa.tp, pa.fp, pa.fn), f1_from_counts(raw.tp, raw.fp, raw.fn)};
}

PaF1 pa_f1(const ProbabilitySurface& s, double threshold) {
  std::map<std::string, std::vector<const SurfaceRow*>> by_episode;
  for (const auto& row : s.rows)
    if (row.mask[0]) by_episode[row.episode].push_back(&row);
  Counts raw, pa;
  for (auto& [id, rows] : by_episode) {
    std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->t < b->t; });
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto* r : rows) {
      scores.push_back(r->p[0]);
      labels.push_back(r->y[0]);
    }
    auto [r, a] = sequence_counts(scores, labels, threshold);
    raw.tp += r.tp, raw.fp += r.fp, raw.fn += r.fn;
    pa.tp += a.tp, pa.fp += a.fp, pa.fn += a.fn;
  }
  return {f1_from_counts(pa.tp, pa.fp, pa.fn), f1_from_counts(raw.tp, raw.fp, raw.fn)};
}

Calibration calibration(const ProbabilitySurface& s, int bins) {
  if (bins < 1) throw ContractError("calibration: bins must be >= 1");
  std::vector<double> n_b(bins, 0.0), conf(bins, 0.0), pos(bins, 0.0), sq(bins, 0.0);
  Calibration c;
  for (const auto& row : s.rows) {
    for (int k = 0; k < s.K; ++k) {
      if (!row.mask[k]) continue;
      const double p = row.p[k];
      const double y = row.y[k];
      const int b = std::min(bins - 1, static_cast<int>(std::floor(p * bins)));
      n_b[b] += 1.0;
      conf[b] += p;
      pos[b] += y;
      sq[b] += (p - y) * (p - y);
      ++c.n;
    }
  }
  if (c.n == 0) throw ContractError("calibration: no valid cells");
  const double N = static_cast<double>(c.n);
  const double base = std::accumulate(pos.begin(), pos.end(), 0.0) / N;
  for (int b = 0; b < bins; ++b) {
    if (n_b[b] == 0.0) continue;
    const double acc = pos[b] / n_b[b];
    c.ece += n_b[b] / N * std::fabs(acc - conf[b] / n_b[b]);
    c.brier += sq[b] / N;
    c.reliability += (sq[b] - n_b[b] * acc * (1.0 - acc)) / N;
    c.resolution += n_b[b] * (acc - base) * (acc - base) / N;
  }
  c.uncertainty = base * (1.0 - base);
  return c;
}

MetricReport evaluate_surface(const ProbabilitySurface& s, const EvalOptions& opts) {
  MetricReport r;
  HAuroc h = h_auroc(s);
  r.h_auroc = h.value;
  r.per_horizon = std::move(h.per_horizon);
  r.n_valid_horizons = h.n_valid_horizons;
  if (opts.time_to_event) r.rmse = rmse_projection(s, *opts.time_to_event);
  r.threshold = opts.threshold;
  r.f1_horizon = opts.f1_horizon > 0 ? opts.f1_horizon : s.K;
  r.f1 = threshold_f1(s, r.f1_horizon, r.threshold);
  PaF1 pa = pa_f1(s, r.threshold);
  r.pa_f1 = pa.pa_f1;
  r.non_pa_f1 = pa.non_pa_f1;
  r.calib = calibration(s);
  return r;
}

}  // namespace hepa
