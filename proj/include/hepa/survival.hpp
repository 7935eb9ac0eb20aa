#pragma once

// Supervised stage: frozen encoder, per-horizon hazards from the predictor
// and event head, the monotone survival CDF and its weighted BCE objective.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hepa/data.hpp"
#include "hepa/metrics.hpp"
#include "hepa/network.hpp"
#include "hepa/tensor.hpp"
#include "hepa/windows.hpp"

namespace hepa {

enum class FinetuneMode {
  PredictorFinetune,  // predictor + head trained
  Probe,  // head on h_t alone: one hazard shared by every horizon
  FrozenMulti,  // predictor frozen, head trained on its per-horizon outputs
};

enum class PredictorInit { Pretrained, Random };

struct FinetuneConfig {
  float lr = 1e-3f;
  float weight_decay = 1e-2f;
  int batch = 64;  // anchors per step; each contributes K cells
  int max_epochs = 50;
  int patience = 10;
  double label_fraction = 1.0;
  PredictorInit predictor_init = PredictorInit::Pretrained;
  FinetuneMode mode = FinetuneMode::PredictorFinetune;
  std::uint64_t seed = 0;
  bool shuffle_labels = false;  // permute label rows across labeled anchors (chance-level control)
  int max_steps_per_epoch = 512;
  int f1_horizon = 0;  // 0: K
};

// lambda in (0,1) -> p(dt) = 1 - prod_{j<=dt} (1 - lambda_j), via log1p.
std::vector<double> survival_cdf(const std::vector<double>& lambdas);
// Same construction from hazard logits: p = -expm1(sum -softplus(logit)).
std::vector<double> cdf_from_logits(std::span<const float> logits);

// In-graph CDF from hazard logits [N, K].
Tensor cdf_tensor(const Tensor& logits);
// Mean over valid cells of -(w_plus y log p + (1-y) log(1-p)), p clipped to
// [1e-7, 1-1e-7]. y and mask are [N, K] row-major.
Tensor finetune_loss(const Tensor& p, const std::vector<std::uint8_t>& y, const std::vector<std::uint8_t>& mask,
                     double w_plus);
// N_neg / N_pos over valid cells; ConfigError when there are no positives.
double positive_weight(const std::vector<std::uint8_t>& y, const std::vector<std::uint8_t>& mask);

// ceil(fraction * n) whole episodes, chosen by rng, original order kept.
std::vector<Episode> subsample_labels(const std::vector<Episode>& episodes, double fraction, std::mt19937_64& rng);

// Hazard logits [N, K] for precomputed causal embeddings h_t [N, d].
Tensor hazard_logits(const HepaModel& model, const Tensor& h_t, int K, FinetuneMode mode);
// Hazards for one anchor embedding, dt = 1..K.
std::vector<double> hazards(const HepaModel& model, const Tensor& h_t, int K, FinetuneMode mode);

struct LabeledAnchors {
  std::vector<AnchorRef> anchors;
  std::vector<std::uint8_t> y;  // [N, K]
  std::vector<std::uint8_t> mask;
  std::vector<double> time_to_event;  // NaN where unknown
};

LabeledAnchors label_anchors(const std::vector<Episode>& episodes, const DatasetSpec& spec);

ProbabilitySurface predict_surface(const HepaModel& model, const Tensor& h_t, const LabeledAnchors& rows, int K,
                                   FinetuneMode mode, const std::string& dataset, std::uint64_t seed);

struct FinetuneEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double monitor = 0.0;  // validation h-AUROC, or -train loss without a validation split
};

struct FinetuneResult {
  HepaModel model;
  int best_epoch = 0;
  std::size_t labeled_episodes = 0;
  std::size_t validation_episodes = 0;
  std::int64_t trainable_params = 0;
  double w_plus = 0.0;
  std::vector<FinetuneEpoch> history;
  ProbabilitySurface test_surface;
  std::vector<double> test_time_to_event;
  MetricReport report;
};

// `pretrained` is not modified; the result holds an independent copy.
FinetuneResult predictor_finetune(const Dataset& data, const DatasetSpec& spec, const HepaModel& pretrained,
                                  const FinetuneConfig& cfg,
                                  const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

std::string to_string(FinetuneMode mode);
FinetuneMode parse_finetune_mode(const std::string& name);
std::string to_string(PredictorInit init);
PredictorInit parse_predictor_init(const std::string& name);

}  // namespace hepa
