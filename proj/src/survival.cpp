#include "hepa/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hepa/errors.hpp"
#include "hepa/optim.hpp"

namespace hepa {

namespace {

constexpr float kProbFloor = 1e-7f;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

std::vector<std::int64_t> range_indices(std::size_t n) {
  std::vector<std::int64_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> survival_cdf(const std::vector<double>& lambdas) {
  std::vector<double> p(lambdas.size());
  double log_surv = 0.0;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (!(lambdas[k] >= 0.0 && lambdas[k] < 1.0)) throw ContractError("survival_cdf: hazard outside [0, 1)");
    log_surv += std::log1p(-lambdas[k]);
    p[k] = -std::expm1(log_surv);
  }
  return p;
}

std::vector<double> cdf_from_logits(std::span<const float> logits) {
  std::vector<double> p(logits.size());
  double log_surv = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    log_surv -= softplus(static_cast<double>(logits[k]));
    p[k] = -std::expm1(log_surv);
  }
  return p;
}

Tensor cdf_tensor(const Tensor& logits) {
  Tensor log_surv = cumsum_last(scale(softplus(logits), -1.0f));
  return add_scalar(scale(exp(log_surv), -1.0f), 1.0f);
}

Tensor finetune_loss(const Tensor& p, const std::vector<std::uint8_t>& y, const std::vector<std::uint8_t>& mask,
                     double w_plus) {
  const auto n = static_cast<std::size_t>(p.numel());
  if (y.size() != n || mask.size() != n) throw ShapeError("finetune_loss: labels do not match the surface");
  Tensor w_pos(p.shape()), w_neg(p.shape());
  std::int64_t n_valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++n_valid;
    (y[i] ? w_pos.values()[i] : w_neg.values()[i]) = y[i] ? static_cast<float>(w_plus) : 1.0f;
  }
  if (n_valid == 0) throw ContractError("finetune_loss: no valid cells");
  Tensor pc = clamp(p, kProbFloor, 1.0f - kProbFloor);
  Tensor ll = add(mul(log(pc), w_pos), mul(log(add_scalar(scale(pc, -1.0f), 1.0f)), w_neg));
  return scale(sum(ll), -1.0f / static_cast<float>(n_valid));
}

double positive_weight(const std::vector<std::uint8_t>& y, const std::vector<std::uint8_t>& mask) {
  std::int64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!mask[i]) continue;
    (y[i] ? pos : neg) += 1;
  }
  if (pos == 0) throw ConfigError("no positives in the labeled training split");
  return static_cast<double>(neg) / static_cast<double>(pos);
}

std::vector<Episode> subsample_labels(const std::vector<Episode>& episodes, double fraction, std::mt19937_64& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0, 1]");
  const auto n = episodes.size();
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  if (keep == n) return episodes;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<Episode> out;
  for (auto i : idx) out.push_back(episodes[i]);
  return out;
}

Tensor hazard_logits(const HepaModel& model, const Tensor& h_t, int K, FinetuneMode mode) {
  const auto N = h_t.dim(0);
  if (mode == FinetuneMode::Probe) {
    Tensor logit = reshape(model.head.forward(h_t), {N, 1});
    return reshape(repeat_rows(logit, K), {N, K});
  }
  std::vector<int> dts(static_cast<std::size_t>(N * K));
  for (std::int64_t i = 0; i < N * K; ++i) dts[i] = static_cast<int>(i % K) + 1;
  Tensor h_hat = model.predictor.forward(repeat_rows(h_t, K), dts);
  return reshape(model.head.forward(h_hat), {N, K});
}

std::vector<double> hazards(const HepaModel& model, const Tensor& h_t, int K, FinetuneMode mode) {
  NoGradGuard ng;
  Tensor h = h_t.rank() == 1 ? reshape(h_t, {1, h_t.dim(0)}) : h_t;
  Tensor logits = hazard_logits(model, h, K, mode);
  std::vector<double> lam;
  for (float l : logits.values()) {
    const double x = l;
    lam.push_back(x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)));
  }
  return lam;
}

LabeledAnchors label_anchors(const std::vector<Episode>& episodes, const DatasetSpec& spec) {
  LabeledAnchors out;
  for (const auto& ep : episodes) {
    for (auto t : anchor_times(ep, spec)) {
      out.anchors.push_back({&ep, t});
      LabelRow row = build_labels(ep, t, spec.K);
      out.y.insert(out.y.end(), row.y.begin(), row.y.end());
      out.mask.insert(out.mask.end(), row.mask.begin(), row.mask.end());
      out.time_to_event.push_back(time_to_event(ep, t, spec.lifecycle, spec.rul_cap));
    }
  }
  return out;
}

ProbabilitySurface predict_surface(const HepaModel& model, const Tensor& h_t, const LabeledAnchors& rows, int K,
                                   FinetuneMode mode, const std::string& dataset, std::uint64_t seed) {
  NoGradGuard ng;
  ProbabilitySurface s;
  s.K = K;
  s.dataset = dataset;
  s.seed = seed;
  const auto N = static_cast<std::int64_t>(rows.anchors.size());
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t begin = 0; begin < N; begin += kChunk) {
    const auto end = std::min(N, begin + kChunk);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    Tensor logits = hazard_logits(model, gather_rows(h_t, idx), K, mode);
    for (std::int64_t i = begin; i < end; ++i) {
      SurfaceRow row;
      row.episode = rows.anchors[i].episode->id;
      row.t = rows.anchors[i].t;
      row.p = cdf_from_logits(logits.values().subspan((i - begin) * K, K));
      row.y.assign(rows.y.begin() + i * K, rows.y.begin() + (i + 1) * K);
      row.mask.assign(rows.mask.begin() + i * K, rows.mask.begin() + (i + 1) * K);
      s.rows.push_back(std::move(row));
    }
  }
  validate_surface(s);
  return s;
}

FinetuneResult predictor_finetune(const Dataset& data, const DatasetSpec& spec, const HepaModel& pretrained,
                                  const FinetuneConfig& cfg, const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  if (cfg.batch < 1) throw ConfigError("finetune: batch must be >= 1");
  if (cfg.max_epochs < 1) throw ConfigError("finetune: max_epochs must be >= 1");
  const int K = spec.K;
  if (pretrained.predictor.K() != K) {
    throw ConfigError("finetune: checkpoint was trained with K=" + std::to_string(pretrained.predictor.K()) +
                      " but the dataset asks for K=" + std::to_string(K));
  }
  const WindowPolicy policy = WindowPolicy::from_spec(spec, static_cast<std::int64_t>(data.channels.size()));

  FinetuneResult result;
  HepaModel model = pretrained.clone();
  std::mt19937_64 init_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0x51);
  if (cfg.predictor_init == PredictorInit::Random) model.predictor = Predictor(model.config, init_rng);
  model.head = EventHead(model.config.d_model, init_rng);
  set_trainable(model.encoder.parameters(), false);
  set_trainable(model.predictor.parameters(), cfg.mode == FinetuneMode::PredictorFinetune);
  set_trainable(model.head.parameters(), true);
  result.trainable_params = count_trainable(model.parameters());

  std::mt19937_64 sub_rng(cfg.seed + 0x1234);
  std::vector<Episode> labeled = subsample_labels(data.train, cfg.label_fraction, sub_rng);
  result.labeled_episodes = labeled.size();
  std::vector<Episode> val_eps;
  if (labeled.size() >= 5) {
    const auto n_val =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(labeled.size()))));
    val_eps.assign(labeled.end() - n_val, labeled.end());
    labeled.resize(labeled.size() - n_val);
  }
  result.validation_episodes = val_eps.size();

  LabeledAnchors train = label_anchors(labeled, spec);
  LabeledAnchors val = label_anchors(val_eps, spec);
  const LabeledAnchors test = label_anchors(data.test, spec);
  if (train.anchors.empty()) throw ConfigError("no labeled anchors: episodes are shorter than one context window");

  if (cfg.shuffle_labels) {
    // Rows of (y, mask) are permuted across train and validation anchors.
    const auto n_tr = train.anchors.size(), n_all = n_tr + val.anchors.size();
    std::vector<std::size_t> perm(n_all);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed + 0xabcdef);
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    auto row_of = [&](std::size_t i, const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
      const auto& src = i < n_tr ? a : b;
      const auto off = (i < n_tr ? i : i - n_tr) * K;
      return std::vector<std::uint8_t>(src.begin() + off, src.begin() + off + K);
    };
    std::vector<std::uint8_t> y_all, m_all;
    for (auto i : perm) {
      auto yr = row_of(i, train.y, val.y);
      auto mr = row_of(i, train.mask, val.mask);
      y_all.insert(y_all.end(), yr.begin(), yr.end());
      m_all.insert(m_all.end(), mr.begin(), mr.end());
    }
    train.y.assign(y_all.begin(), y_all.begin() + n_tr * K);
    train.mask.assign(m_all.begin(), m_all.begin() + n_tr * K);
    val.y.assign(y_all.begin() + n_tr * K, y_all.end());
    val.mask.assign(m_all.begin() + n_tr * K, m_all.end());
  }

  result.w_plus = positive_weight(train.y, train.mask);
  const Tensor h_train = embed_contexts(model.encoder, train.anchors, policy);
  const Tensor h_val = embed_contexts(model.encoder, val.anchors, policy);
  const Tensor h_test = embed_contexts(model.encoder, test.anchors, policy);

  std::vector<Tensor> params;
  for (auto& [name, t] : model.parameters())
    if (t.requires_grad()) params.push_back(t);
  AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  std::mt19937_64 rng(cfg.seed * 0x2545f4914f6cdd1dULL + 0x77);
  const auto n_train = train.anchors.size();
  const int steps = static_cast<int>(
      std::min<std::size_t>((n_train + cfg.batch - 1) / cfg.batch, static_cast<std::size_t>(cfg.max_steps_per_epoch)));
  auto order = range_indices(n_train);
  std::size_t cursor = n_train;

  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  HepaModel best_model = model.clone();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<double> losses;
    for (int step = 0; step < steps; ++step) {
      std::vector<std::int64_t> idx;
      while (idx.size() < std::min<std::size_t>(cfg.batch, n_train)) {
        if (cursor == n_train) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        idx.push_back(order[cursor++]);
      }
      std::vector<std::uint8_t> y, m;
      for (auto i : idx) {
        y.insert(y.end(), train.y.begin() + i * K, train.y.begin() + (i + 1) * K);
        m.insert(m.end(), train.mask.begin() + i * K, train.mask.begin() + (i + 1) * K);
      }
      if (std::find(m.begin(), m.end(), 1) == m.end()) continue;
      opt.zero_grad();
      Tensor p = cdf_tensor(hazard_logits(model, gather_rows(h_train, idx), K, cfg.mode));
      Tensor loss = finetune_loss(p, y, m, result.w_plus);
      backward(loss);
      opt.step();
      losses.push_back(loss.item());
    }
    FinetuneEpoch rec{epoch, mean_of(losses), -mean_of(losses)};
    if (!val.anchors.empty()) {
      ProbabilitySurface vs = predict_surface(model, h_val, val, K, cfg.mode, data.name, cfg.seed);
      auto h = h_auroc(vs);
      if (h.value) {
        rec.monitor = *h.value;
      } else {
        NoGradGuard ng;
        rec.monitor = -finetune_loss(cdf_tensor(hazard_logits(model, h_val, K, cfg.mode)), val.y, val.mask,
                                     result.w_plus)
                           .item();
      }
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.monitor > best) {
      best = rec.monitor;
      since_best = 0;
      best_model = model.clone();
      result.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  result.model = best_model;
  result.test_surface = predict_surface(result.model, h_test, test, K, cfg.mode, data.name, cfg.seed);
  result.test_time_to_event = test.time_to_event;

  EvalOptions opts;
  opts.f1_horizon = cfg.f1_horizon > 0 ? std::min(cfg.f1_horizon, K) : K;
  const bool has_val = !val.anchors.empty();
  ProbabilitySurface thr_surface = predict_surface(result.model, has_val ? h_val : h_train, has_val ? val : train, K,
                                                   cfg.mode, data.name, cfg.seed);
  opts.threshold = select_threshold(thr_surface, opts.f1_horizon);
  if (spec.lifecycle) opts.time_to_event = test.time_to_event;
  if (!result.test_surface.rows.empty()) result.report = evaluate_surface(result.test_surface, opts);
  return result;
}

std::string to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::PredictorFinetune:
      return "pred_ft";
    case FinetuneMode::Probe:
      return "probe";
    case FinetuneMode::FrozenMulti:
      return "frozen_multi";
  }
  return "pred_ft";
}

FinetuneMode parse_finetune_mode(const std::string& name) {
  if (name == "pred_ft") return FinetuneMode::PredictorFinetune;
  if (name == "probe") return FinetuneMode::Probe;
  if (name == "frozen_multi") return FinetuneMode::FrozenMulti;
  throw ConfigError("unknown finetune mode '" + name + "' (expected pred_ft, probe or frozen_multi)");
}

std::string to_string(PredictorInit init) { return init == PredictorInit::Random ? "random" : "pretrained"; }

PredictorInit parse_predictor_init(const std::string& name) {
  if (name == "pretrained") return PredictorInit::Pretrained;
  if (name == "random") return PredictorInit::Random;
  throw ConfigError("unknown predictor init '" + name + "' (expected pretrained or random)");
}

}  // namespace hepa
