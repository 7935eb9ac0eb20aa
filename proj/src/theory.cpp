#include "hepa/theory.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "hepa/errors.hpp"

namespace hepa {

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

bool constant(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

double permutation_p(const std::vector<double>& rx, std::vector<double> ry, double rho, std::uint64_t seed) {
  const double observed = std::fabs(rho) - 1e-12;
  std::int64_t extreme = 0, total = 0;
  if (rx.size() <= 9) {
    std::sort(ry.begin(), ry.end());
    do {
      ++total;
      extreme += std::fabs(pearson(rx, ry)) >= observed;
    } while (std::next_permutation(ry.begin(), ry.end()));
    return static_cast<double>(extreme) / static_cast<double>(total);
  }
  std::mt19937_64 rng(seed);
  constexpr int kDraws = 20000;
  for (int i = 0; i < kDraws; ++i) {
    std::shuffle(ry.begin(), ry.end(), rng);
    extreme += std::fabs(pearson(rx, ry)) >= observed;
  }
  return static_cast<double>(extreme + 1) / (kDraws + 1);
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const auto n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && xs[order[j]] == xs[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = 0.5 * static_cast<double>(i + 1 + j);
    i = j;
  }
  return ranks;
}

std::optional<Correlation> spearman(const std::vector<double>& xs, const std::vector<double>& ys, bool permutation,
                                    std::uint64_t seed) {
  if (xs.size() != ys.size()) throw ShapeError("spearman: inputs differ in length");
  if (xs.size() < 3) throw ContractError("spearman: need at least 3 points");
  if (constant(xs) || constant(ys)) return std::nullopt;
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  Correlation c;
  c.rho = std::clamp(pearson(rx, ry), -1.0, 1.0);
  const double n = static_cast<double>(xs.size());
  if (permutation) {
    c.p_value = permutation_p(rx, ry, c.rho, seed);
  } else if (std::fabs(c.rho) >= 1.0) {
    c.p_value = 0.0;
  } else if (n > 2) {
    const double t = c.rho * std::sqrt((n - 2.0) / (1.0 - c.rho * c.rho));
    boost::math::students_t dist(n - 2.0);
    c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  }
  return c;
}

std::vector<SweepPoint> read_sweep_csv(const std::string& path) {
  std::vector<SweepPoint> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream is(line);
    SweepPoint p;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(is >> p.epoch >> c1 >> p.seed >> c2 >> p.epsilon >> c3 >> p.h_auroc) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw LoadError("malformed sweep row in '" + path + "'", line_no);
    }
    out.push_back(p);
  }
  return out;
}

void append_sweep_csv(const std::string& path, const SweepPoint& p) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw LoadError("cannot write '" + path + "'");
  if (fresh) out << "epoch,seed,epsilon,h_auroc\n";
  out << std::setprecision(9) << p.epoch << ',' << p.seed << ',' << p.epsilon << ',' << p.h_auroc << '\n';
}

SweepReport run_sweep(const Dataset& data, const DatasetSpec& spec, const NetworkConfig& net,
                      const PretrainConfig& pretrain_cfg, const FinetuneConfig& finetune_cfg, const SweepOptions& opts,
                      const std::function<void(const SweepPoint&)>& on_point) {
  if (opts.seeds.empty()) throw ConfigError("sweep: no seeds given");
  SweepReport report;
  std::set<std::pair<int, std::uint64_t>> done;
  if (!opts.csv_path.empty()) {
    for (const auto& p : read_sweep_csv(opts.csv_path)) {
      if (done.insert({p.epoch, p.seed}).second) report.points.push_back(p);
    }
  }
  for (const auto seed : opts.seeds) {
    PretrainConfig pc = pretrain_cfg;
    pc.seed = seed;
    PretrainResult pre = pretrain(data, spec, net, pc);
    for (const auto& snap : pre.snapshots) {
      if (done.count({snap.epoch, seed})) continue;
      FinetuneConfig fc = finetune_cfg;
      fc.seed = seed;
      FinetuneResult ft = predictor_finetune(data, spec, snap.model, fc);
      if (!ft.report.h_auroc) throw ConfigError("sweep: test split has no retained horizon");
      SweepPoint p{snap.epoch, seed, snap.epsilon, *ft.report.h_auroc};
      done.insert({p.epoch, p.seed});
      report.points.push_back(p);
      if (!opts.csv_path.empty()) append_sweep_csv(opts.csv_path, p);
      if (on_point) on_point(p);
    }
  }
  std::vector<double> eps, auc;
  for (const auto& p : report.points) {
    eps.push_back(p.epsilon);
    auc.push_back(p.h_auroc);
  }
  report.n = report.points.size();
  if (report.n < 3) throw ConfigError("sweep: fewer than 3 points");
  auto c = spearman(eps, auc, opts.permutation, opts.seeds.front());
  if (!c) throw ConfigError("sweep: epsilon or h-AUROC is constant across points");
  report.spearman_rho = c->rho;
  report.p_value = c->p_value;
  return report;
}

}  // namespace hepa
