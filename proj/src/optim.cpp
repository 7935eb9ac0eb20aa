#include "hepa/optim.hpp"

#include <cmath>

#include "hepa/errors.hpp"

namespace hepa {

void adamw_step(std::span<float> params, std::span<const float> grads, AdamState& state,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: params and grads differ in length");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
  const float decay = 1.0f - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0f - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0f - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] = params[i] * decay - static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.requires_grad()) continue;
    std::span<const float> g = p.grad();
    adamw_step(p.values(), g, states_[i], cfg_);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace hepa
