#pragma once

// Self-supervised stage: horizon sampling, the JEPA objective with the
// isotropic-Gaussian regularizer, and the epoch loop.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "hepa/data.hpp"
#include "hepa/network.hpp"
#include "hepa/tensor.hpp"
#include "hepa/windows.hpp"

namespace hepa {

struct PretrainConfig {
  float alpha = 0.1f;
  float lr = 3e-4f;
  float weight_decay = 1e-2f;
  int batch = 64;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 0;
  std::vector<int> snapshot_epochs{1, 3, 8, 25};
  int max_steps_per_epoch = 512;
  int sigreg_directions = 16;
  int val_samples = 512;  // fixed (anchor, horizon) pairs scored each epoch
  std::size_t target_chunk = 16;  // target windows encoded in length-sorted groups
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_l1 = 0.0;  // epsilon
  double val_sigreg = 0.0;
};

struct TrainingSnapshot {
  int epoch = 0;
  double epsilon = 0.0;
  bool best = false;
  HepaModel model;
};

struct PretrainResult {
  HepaModel model;  // best by validation L1
  int best_epoch = 0;
  double best_epsilon = 0.0;
  std::vector<TrainingSnapshot> snapshots;  // configured epochs reached, then the best
  std::vector<EpochRecord> history;
};

// round(exp(U ln dt_max)) clamped to [1, dt_max].
int sample_horizon(std::mt19937_64& rng, int dt_max);

// Mean over m random unit directions of mean^2 + (sqrt(var + 1e-4) - 1)^2 +
// m3^2 + (m4 - 3)^2 of the projected batch, m3 and m4 being central moments.
Tensor sigreg_loss(const Tensor& h_hat, std::mt19937_64& rng, int directions = 16);
Tensor sigreg_loss(const Tensor& h_hat, const Tensor& directions);  // directions [d, m], unit columns

// m standard-normal directions in R^d scaled to unit length, as columns.
Tensor random_directions(std::int64_t d, int directions, std::mt19937_64& rng);

struct JepaLoss {
  Tensor total;
  Tensor l1;
  Tensor sigreg;
};

// (1-alpha) * mean |l2n(h_hat) - l2n(h_star)| + alpha * sigreg(h_hat).
JepaLoss jepa_loss(const Tensor& h_hat, const Tensor& h_star, float alpha, std::mt19937_64& rng,
                   int directions = 16);

// Valid (episode, t) pretraining anchors: a full causal context exists and at
// least one future step remains.
std::vector<AnchorRef> pretrain_anchors(const std::vector<Episode>& episodes, const DatasetSpec& spec);

// Splits train episodes into gradient and validation sets (last 10%).
std::pair<std::vector<Episode>, std::vector<Episode>> pretrain_split(const std::vector<Episode>& train);

// One forward pass of both views. Encoder outputs for the target windows are
// computed in length-sorted chunks and restored to input order.
struct JepaForward {
  Tensor h_t;
  Tensor h_hat;
  Tensor h_star;
};
JepaForward jepa_forward(const HepaModel& model, const std::vector<AnchorRef>& anchors, const std::vector<int>& dts,
                         const WindowPolicy& policy, bool training, std::mt19937_64& rng, std::size_t target_chunk);

PretrainResult pretrain(const Dataset& data, const DatasetSpec& spec, const NetworkConfig& net,
                        const PretrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace hepa
