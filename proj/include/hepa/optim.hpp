#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hepa/tensor.hpp"

namespace hepa {

struct AdamWConfig {
  float lr = 3e-4f;
  float weight_decay = 1e-2f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;
};

// Decoupled weight decay (p *= 1 - lr*wd) followed by a bias-corrected Adam
// update. Moments are allocated on the first call.
void adamw_step(std::span<float> params, std::span<const float> grads, AdamState& state,
                const AdamWConfig& cfg);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  // Parameters that never received a gradient are still decayed.
  void step();
  void zero_grad();
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamWConfig cfg_;
};

}  // namespace hepa
