#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "hepa/errors.hpp"
#include "hepa/theory.hpp"

using namespace hepa;

namespace {

// Two-sided Student-t tail by Simpson integration of the density.
double t_two_sided(double t, double df) {
  auto pdf = [&](double x) {
    return std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI) *
           std::pow(1 + x * x / df, -(df + 1) / 2);
  };
  const int n = 200000;
  const double a = 0, b = std::fabs(t), h = (b - a) / n;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4 : 2);
  return 1.0 - 2.0 * s * h / 3.0;
}

}  // namespace

TEST_CASE("spearman hand cases") {
  CHECK(spearman({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1})->rho == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3, 4, 5}, {1, 2, 3, 4, 5})->rho == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {2, 1, 4, 3})->rho == doctest::Approx(0.6));
  CHECK_FALSE(spearman({1, 1, 1}, {1, 2, 3}).has_value());
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2}), ContractError);
  auto r = average_ranks({10, 20, 20, 5});
  CHECK(r == std::vector<double>{2, 3.5, 3.5, 1});
  // Ties: Pearson of average ranks.
  CHECK(spearman({1, 2, 2, 3}, {1, 3, 2, 4})->rho == doctest::Approx(0.9486832980505138));
}

TEST_CASE("spearman t-approximation p-value") {
  std::vector<double> xs(12), ys(12);
  std::iota(xs.begin(), xs.end(), 0.0);
  ys = {3, 1, 0, 2, 5, 4, 8, 6, 11, 7, 9, 10};
  auto c = *spearman(xs, ys);
  const double t = c.rho * std::sqrt(10.0 / (1 - c.rho * c.rho));
  CHECK(c.p_value == doctest::Approx(t_two_sided(t, 10)).epsilon(1e-6));
}

TEST_CASE("spearman exact permutation p-value") {
  auto c = *spearman({1, 2, 3, 4}, {2, 1, 4, 3}, true);
  // rho = 1 - sum d^2 / 10 for n = 4; count permutations with |rho| >= 0.6.
  std::vector<int> perm{1, 2, 3, 4};
  int extreme = 0, total = 0;
  do {
    int d2 = 0;
    for (int i = 0; i < 4; ++i) d2 += (perm[i] - (i + 1)) * (perm[i] - (i + 1));
    ++total;
    extreme += std::fabs(1.0 - d2 / 10.0) >= 0.6 - 1e-12;
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(c.p_value == doctest::Approx(static_cast<double>(extreme) / total));

  std::vector<double> xs(15), ys(15);
  std::iota(xs.begin(), xs.end(), 0.0);
  std::iota(ys.begin(), ys.end(), 0.0);
  std::swap(ys[0], ys[7]);
  auto mc = *spearman(xs, ys, true, 3);
  CHECK(mc.p_value < 0.01);
}

TEST_CASE("sweep csv round trip and resume keys") {
  const auto path = (std::filesystem::temp_directory_path() / "hepa_test_sweep.csv").string();
  std::filesystem::remove(path);
  append_sweep_csv(path, {1, 0, 0.25, 0.6});
  append_sweep_csv(path, {3, 2, 0.125, 0.71});
  auto pts = read_sweep_csv(path);
  REQUIRE(pts.size() == 2);
  CHECK(pts[1].epoch == 3);
  CHECK(pts[1].seed == 2);
  CHECK(pts[1].epsilon == 0.125);
  CHECK(pts[1].h_auroc == 0.71);
  CHECK(read_sweep_csv("/nonexistent/sweep.csv").empty());
}

TEST_CASE("sweep runs snapshots per seed and resumes") {
  SyntheticSpec syn;
  syn.n_episodes = 20;
  syn.channels = 2;
  syn.steps = 160;
  DatasetSpec spec;
  spec.name = "tiny";
  spec.context_len = 32;
  spec.patch = 8;
  spec.K = 16;
  spec.stride = 4;
  spec.synthetic = syn;
  Dataset ds = prepare_dataset(spec);
  NetworkConfig net;
  net.d_in = 16;
  net.d_model = 16;
  net.heads = 2;
  net.ffn = 32;
  net.K = 16;
  PretrainConfig pc;
  pc.batch = 16;
  pc.max_epochs = 3;
  pc.max_steps_per_epoch = 2;
  pc.val_samples = 32;
  pc.snapshot_epochs = {1, 2};
  FinetuneConfig fc;
  fc.max_epochs = 1;
  fc.max_steps_per_epoch = 2;
  SweepOptions opts;
  opts.seeds = {0, 1};
  opts.csv_path = (std::filesystem::temp_directory_path() / "hepa_test_sweep_run.csv").string();
  std::filesystem::remove(opts.csv_path);
  int calls = 0;
  SweepReport r = run_sweep(ds, spec, net, pc, fc, opts, [&](const SweepPoint&) { ++calls; });
  CHECK(r.n == read_sweep_csv(opts.csv_path).size());
  CHECK(r.n >= 4);
  CHECK(r.n <= 6);
  CHECK(calls == static_cast<int>(r.n));
  calls = 0;
  SweepReport again = run_sweep(ds, spec, net, pc, fc, opts, [&](const SweepPoint&) { ++calls; });
  CHECK(calls == 0);
  CHECK(again.spearman_rho == r.spearman_rho);
  CHECK(again.n == r.n);
}
