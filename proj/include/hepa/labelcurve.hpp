#pragma once

// Label-efficiency curve: predictor finetuning at decreasing label fractions
// from one pretrained model per seed.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "hepa/data.hpp"
#include "hepa/network.hpp"
#include "hepa/pretrain.hpp"
#include "hepa/survival.hpp"

namespace hepa {

struct LabelCurvePoint {
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t labeled_episodes = 0;
  std::optional<double> h_auroc;  // empty when the subset had no positives or no retained horizon
  std::optional<double> rmse;  // lifecycle data only
};

struct LabelCurveSummary {
  double fraction = 1.0;
  std::optional<double> h_auroc;  // mean over seeds with a value
  std::optional<double> retention;  // h_auroc(fraction) / h_auroc(1.0)
  int n_seeds = 0;
};

struct LabelCurve {
  std::vector<LabelCurvePoint> points;
  std::vector<LabelCurveSummary> summary;  // one per fraction, in the given order
};

// For each seed: pretrain (or use `pretrained` when given), then finetune at
// every fraction. Retention divides by the fraction-1.0 mean, so 1.0 must be
// among `fractions` for retention to be reported.
LabelCurve run_label_curve(const Dataset& data, const DatasetSpec& spec, const NetworkConfig& net,
                           const PretrainConfig& pretrain_cfg, const FinetuneConfig& finetune_cfg,
                           const std::vector<std::uint64_t>& seeds, const std::vector<double>& fractions,
                           const HepaModel* pretrained = nullptr,
                           const std::function<void(const LabelCurvePoint&)>& on_point = {});

}  // namespace hepa
