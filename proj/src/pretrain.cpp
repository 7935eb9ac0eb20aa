#include "hepa/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hepa/errors.hpp"
#include "hepa/optim.hpp"

namespace hepa {

namespace {

constexpr float kStdEps = 1e-4f;

struct PairSampler {
  const std::vector<AnchorRef>* anchors;
  int K;

  std::pair<AnchorRef, int> draw(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, anchors->size() - 1);
    for (;;) {
      const int dt = sample_horizon(rng, K);
      for (int attempt = 0; attempt < 64; ++attempt) {
        const AnchorRef& a = (*anchors)[pick(rng)];
        if (a.t + dt <= a.episode->steps - 1) return {a, dt};
      }
    }
  }
};

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

int sample_horizon(std::mt19937_64& rng, int dt_max) {
  if (dt_max < 1) throw ContractError("sample_horizon: dt_max must be >= 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double dt = std::round(std::exp(u(rng) * std::log(static_cast<double>(dt_max))));
  return std::clamp(static_cast<int>(dt), 1, dt_max);
}

Tensor random_directions(std::int64_t d, int directions, std::mt19937_64& rng) {
  if (directions < 1) throw ContractError("sigreg_loss: need at least one direction");
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor dirs(Shape{d, directions});
  auto dv = dirs.values();
  for (float& v : dv) v = normal(rng);
  for (int m = 0; m < directions; ++m) {
    double ss = 0.0;
    for (std::int64_t i = 0; i < d; ++i) ss += static_cast<double>(dv[i * directions + m]) * dv[i * directions + m];
    const auto inv = static_cast<float>(1.0 / std::sqrt(ss));
    for (std::int64_t i = 0; i < d; ++i) dv[i * directions + m] *= inv;
  }
  return dirs;
}

Tensor sigreg_loss(const Tensor& h_hat, const Tensor& directions) {
  if (h_hat.rank() != 2) throw ShapeError("sigreg_loss: expected [B, d]");
  if (h_hat.dim(0) < 2) throw ContractError("sigreg_loss: batch must hold at least 2 rows");
  if (directions.rank() != 2 || directions.dim(0) != h_hat.dim(1)) {
    throw ShapeError("sigreg_loss: directions must be [d, m], got " + shape_str(directions.shape()));
  }
  Tensor proj = matmul(h_hat, directions);  // [B, m]
  Tensor mu = column_mean(proj);
  Tensor centered = sub(proj, mu);
  Tensor var = column_mean(square(centered));
  // Scale is matched through the standard deviation: (var-1)^2 has a gradient
  // proportional to the spread and so vanishes at collapse, which is exactly
  // where the regularizer has to push. Higher moments are raw central moments
  // against N(0,1) (third 0, fourth 3); standardized skew and kurtosis are
  // scale-free and their gradients blow up like 1/sigma near collapse.
  Tensor sd = pow(add_scalar(var, kStdEps), 0.5f);
  Tensor m3 = column_mean(pow(centered, 3.0f));
  Tensor m4 = add_scalar(column_mean(square(square(centered))), -3.0f);
  Tensor per_dir = add(add(square(mu), square(add_scalar(sd, -1.0f))), add(square(m3), square(m4)));
  return mean(per_dir);
}

Tensor sigreg_loss(const Tensor& h_hat, std::mt19937_64& rng, int directions) {
  if (h_hat.rank() != 2) throw ShapeError("sigreg_loss: expected [B, d]");
  return sigreg_loss(h_hat, random_directions(h_hat.dim(1), directions, rng));
}

JepaLoss jepa_loss(const Tensor& h_hat, const Tensor& h_star, float alpha, std::mt19937_64& rng, int directions) {
  if (h_hat.shape() != h_star.shape()) {
    throw ShapeError("jepa_loss: prediction " + shape_str(h_hat.shape()) + " vs target " + shape_str(h_star.shape()));
  }
  if (alpha < 0.0f || alpha > 1.0f) throw ConfigError("alpha must lie in [0, 1]");
  JepaLoss out;
  out.l1 = mean(abs(sub(l2_normalize(h_hat), l2_normalize(h_star))));
  out.sigreg = sigreg_loss(h_hat, rng, directions);
  out.total = add(scale(out.l1, 1.0f - alpha), scale(out.sigreg, alpha));
  return out;
}

std::vector<AnchorRef> pretrain_anchors(const std::vector<Episode>& episodes, const DatasetSpec& spec) {
  DatasetSpec dense = spec;
  dense.stride = 1;
  std::vector<AnchorRef> out;
  for (const auto& ep : episodes)
    for (auto t : anchor_times(ep, dense)) out.push_back({&ep, t});
  return out;
}

std::pair<std::vector<Episode>, std::vector<Episode>> pretrain_split(const std::vector<Episode>& train) {
  const auto n = train.size();
  if (n < 2) return {train, train};
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  return {std::vector<Episode>(train.begin(), train.end() - n_val), std::vector<Episode>(train.end() - n_val, train.end())};
}

JepaForward jepa_forward(const HepaModel& model, const std::vector<AnchorRef>& anchors, const std::vector<int>& dts,
                         const WindowPolicy& policy, bool training, std::mt19937_64& rng, std::size_t target_chunk) {
  JepaForward out;
  ContextBatch ctx = build_context_batch(anchors, policy);
  out.h_t = model.encoder.encode_causal(ctx.tokens, ctx.pad, training, rng);
  out.h_hat = model.predictor.forward(out.h_t, dts);

  TargetBatch all = build_target_batch(anchors, dts, ctx.stats, policy);
  std::vector<std::int64_t> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return all.length[a] < all.length[b]; });
  const auto D = policy.token_dim();
  const auto n_all = all.tokens.dim(1);
  std::vector<Tensor> parts;
  std::vector<std::int64_t> position(anchors.size());
  const std::size_t chunk = std::max<std::size_t>(1, target_chunk);
  for (std::size_t begin = 0; begin < order.size(); begin += chunk) {
    const auto end = std::min(order.size(), begin + chunk);
    std::int64_t n = 0;
    for (auto i = begin; i < end; ++i) n = std::max(n, all.length[order[i]]);
    Tensor tokens(Shape{static_cast<std::int64_t>(end - begin), n, D});
    std::vector<std::int64_t> length;
    for (auto i = begin; i < end; ++i) {
      const auto src = order[i];
      std::copy_n(all.tokens.values().begin() + src * n_all * D, n * D,
                  tokens.values().begin() + static_cast<std::int64_t>(i - begin) * n * D);
      length.push_back(all.length[src]);
      position[src] = static_cast<std::int64_t>(i);
    }
    parts.push_back(model.encoder.encode_target(tokens, length, training, rng));
  }
  out.h_star = gather_rows(concat_rows(parts), position);
  return out;
}

PretrainResult pretrain(const Dataset& data, const DatasetSpec& spec, const NetworkConfig& net,
                        const PretrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (cfg.batch < 2) throw ConfigError("pretrain: batch must be >= 2");
  if (cfg.max_epochs < 1) throw ConfigError("pretrain: max_epochs must be >= 1");
  if (cfg.alpha < 0.0f || cfg.alpha > 1.0f) throw ConfigError("pretrain: alpha must lie in [0, 1]");
  const WindowPolicy policy = WindowPolicy::from_spec(spec, static_cast<std::int64_t>(data.channels.size()));
  if (net.d_in != policy.token_dim()) throw ConfigError("pretrain: network d_in does not match the token width");

  auto [fit_eps, val_eps] = pretrain_split(data.train);
  const auto fit_anchors = pretrain_anchors(fit_eps, spec);
  auto val_anchors = pretrain_anchors(val_eps, spec);
  if (fit_anchors.empty()) {
    throw ConfigError("dataset '" + data.name + "' is too short for any (t, dt) pretraining pair");
  }
  if (val_anchors.empty()) val_anchors = fit_anchors;

  HepaModel model(net, cfg.seed);
  std::mt19937_64 rng(cfg.seed * 0x2545f4914f6cdd1dULL + 1);

  // Fixed validation pairs and fixed regularizer directions, so epsilon is
  // comparable across epochs.
  std::vector<AnchorRef> val_a;
  std::vector<int> val_dt;
  {
    std::mt19937_64 vrng(cfg.seed + 7919);
    PairSampler vs{&val_anchors, net.K};
    for (int i = 0; i < cfg.val_samples; ++i) {
      auto [a, dt] = vs.draw(vrng);
      val_a.push_back(a);
      val_dt.push_back(dt);
    }
  }

  auto evaluate = [&](const HepaModel& m) {
    NoGradGuard ng;
    std::mt19937_64 erng(cfg.seed + 104729);
    std::vector<double> l1, sig;
    const std::size_t chunk = static_cast<std::size_t>(std::max(2, cfg.batch));
    for (std::size_t begin = 0; begin < val_a.size(); begin += chunk) {
      const auto end = std::min(val_a.size(), begin + chunk);
      if (end - begin < 2) break;
      std::vector<AnchorRef> a(val_a.begin() + begin, val_a.begin() + end);
      std::vector<int> dt(val_dt.begin() + begin, val_dt.begin() + end);
      JepaForward f = jepa_forward(m, a, dt, policy, false, erng, cfg.target_chunk);
      JepaLoss loss = jepa_loss(f.h_hat, f.h_star, cfg.alpha, erng, cfg.sigreg_directions);
      l1.push_back(loss.l1.item());
      sig.push_back(loss.sigreg.item());
    }
    return std::pair{mean_of(l1), mean_of(sig)};
  };

  std::vector<Tensor> params;
  for (auto& [name, t] : model.parameters()) params.push_back(t);
  AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  const auto full_steps = (fit_anchors.size() + cfg.batch - 1) / cfg.batch;
  const int steps = static_cast<int>(std::min<std::size_t>(full_steps, static_cast<std::size_t>(cfg.max_steps_per_epoch)));
  PairSampler sampler{&fit_anchors, net.K};

  PretrainResult result;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<double> losses;
    for (int step = 0; step < steps; ++step) {
      std::vector<AnchorRef> a;
      std::vector<int> dt;
      for (int i = 0; i < cfg.batch; ++i) {
        auto [anchor, h] = sampler.draw(rng);
        a.push_back(anchor);
        dt.push_back(h);
      }
      opt.zero_grad();
      JepaForward f = jepa_forward(model, a, dt, policy, true, rng, cfg.target_chunk);
      JepaLoss loss = jepa_loss(f.h_hat, f.h_star, cfg.alpha, rng, cfg.sigreg_directions);
      backward(loss.total);
      opt.step();
      losses.push_back(loss.total.item());
    }
    auto [val_l1, val_sig] = evaluate(model);
    EpochRecord rec{epoch, mean_of(losses), val_l1, val_sig};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch) != cfg.snapshot_epochs.end()) {
      result.snapshots.push_back({epoch, val_l1, false, model.clone()});
    }
    if (val_l1 < best) {
      best = val_l1;
      since_best = 0;
      result.model = model.clone();
      result.best_epoch = epoch;
      result.best_epsilon = val_l1;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.snapshots.push_back({result.best_epoch, result.best_epsilon, true, result.model.clone()});
  return result;
}

}  // namespace hepa
