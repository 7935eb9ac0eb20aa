#pragma once

// Snapshot sweep: finetune from pretraining snapshots and correlate the
// pretraining loss with downstream h-AUROC.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hepa/data.hpp"
#include "hepa/network.hpp"
#include "hepa/pretrain.hpp"
#include "hepa/survival.hpp"

namespace hepa {

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided
};

// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(const std::vector<double>& xs);

// Spearman rank correlation. The p-value uses t = rho sqrt((n-2)/(1-rho^2))
// against Student-t(n-2), or with `permutation` a permutation test (exact
// for n <= 9, 20000 random permutations otherwise). Empty when either input
// is constant. Requires n >= 3.
std::optional<Correlation> spearman(const std::vector<double>& xs, const std::vector<double>& ys,
                                    bool permutation = false, std::uint64_t seed = 0);

struct SweepPoint {
  int epoch = 0;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  double h_auroc = 0.0;
};

struct SweepReport {
  std::vector<SweepPoint> points;
  double spearman_rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

struct SweepOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string csv_path;  // points are appended here; existing (epoch, seed) keys are skipped
  bool permutation = false;
};

// Per seed: pretrain, then finetune from every snapshot (the best one is
// dropped when it coincides with a configured epoch). Throws ConfigError with
// fewer than 3 points or a constant column.
SweepReport run_sweep(const Dataset& data, const DatasetSpec& spec, const NetworkConfig& net,
                      const PretrainConfig& pretrain_cfg, const FinetuneConfig& finetune_cfg,
                      const SweepOptions& opts, const std::function<void(const SweepPoint&)>& on_point = {});

std::vector<SweepPoint> read_sweep_csv(const std::string& path);
void append_sweep_csv(const std::string& path, const SweepPoint& p);

}  // namespace hepa
