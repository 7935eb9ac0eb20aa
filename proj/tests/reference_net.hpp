#pragma once

// Plain double-precision re-implementation of the network and of the check
// loss used by graphcheck.hpp. Loops only, no tensor library, no padding:
// each context and target window is encoded at its true length.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hepa/network.hpp"
#include "hepa/windows.hpp"

namespace reference {

using Vec = std::vector<double>;
using Params = std::map<std::string, Vec>;

inline Params snapshot(const hepa::HepaModel& model) {
  Params p;
  for (const auto& [name, t] : model.parameters()) p[name] = Vec(t.values().begin(), t.values().end());
  return p;
}

// rows x in -> rows x out, with w stored [in, out].
inline Vec affine(const Vec& x, std::size_t rows, const Vec& w, const Vec& b) {
  const std::size_t out = b.size(), in = w.size() / out;
  Vec y(rows * out);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s;
    }
  return y;
}

inline Vec layernorm(const Vec& x, std::size_t rows, const Vec& g, const Vec& b) {
  const std::size_t d = g.size();
  Vec y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < d; ++i) m += x[r * d + i];
    m /= d;
    for (std::size_t i = 0; i < d; ++i) v += (x[r * d + i] - m) * (x[r * d + i] - m);
    v /= d;
    for (std::size_t i = 0; i < d; ++i) y[r * d + i] = (x[r * d + i] - m) / std::sqrt(v + 1e-5) * g[i] + b[i];
  }
  return y;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v))); }

// tokens [n, d_in] -> outputs [n, d]. Query i sees keys 0..i when causal,
// all keys otherwise. Position of token i is i.
inline Vec encode(const Params& P, const hepa::NetworkConfig& cfg, const Vec& tokens, std::size_t n, bool causal) {
  const std::size_t d = cfg.d_model, H = cfg.heads, dh = d / H;
  Vec x = affine(tokens, n, P.at("encoder.input.w"), P.at("encoder.input.b"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d / 2; ++k) {
      const double angle = i * std::pow(10000.0, -2.0 * k / d);
      x[i * d + 2 * k] += std::sin(angle);
      x[i * d + 2 * k + 1] += std::cos(angle);
    }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "encoder.block" + std::to_string(l) + ".";
    Vec qkv = affine(layernorm(x, n, P.at(p + "ln_attn.gain"), P.at(p + "ln_attn.bias")), n, P.at(p + "qkv.w"),
                     P.at(p + "qkv.b"));
    Vec ctx(n * d, 0.0);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t last = causal ? i : n - 1;
        Vec s(last + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= last; ++j) {
          double dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qkv[i * 3 * d + h * dh + c] * qkv[j * 3 * d + d + h * dh + c];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j <= last; ++j)
          for (std::size_t c = 0; c < dh; ++c) ctx[i * d + h * dh + c] += s[j] / z * qkv[j * 3 * d + 2 * d + h * dh + c];
      }
    Vec attn = affine(ctx, n, P.at(p + "attn_out.w"), P.at(p + "attn_out.b"));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];
    Vec hid = affine(layernorm(x, n, P.at(p + "ln_ffn.gain"), P.at(p + "ln_ffn.bias")), n, P.at(p + "ffn_in.w"),
                     P.at(p + "ffn_in.b"));
    for (auto& v : hid) v = gelu(v);
    Vec ff = affine(hid, n, P.at(p + "ffn_out.w"), P.at(p + "ffn_out.b"));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += ff[i];
  }
  return layernorm(x, n, P.at("encoder.final.gain"), P.at("encoder.final.bias"));
}

inline Vec pool(const Params& P, const Vec& y, std::size_t n, std::size_t d) {
  const Vec& q = P.at("encoder.pool_query");
  Vec s(n);
  double mx = -1e300, z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0;
    for (std::size_t c = 0; c < d; ++c) dot += q[c] * y[i * d + c];
    mx = std::max(mx, s[i] = dot / std::sqrt(static_cast<double>(d)));
  }
  for (auto& v : s) z += (v = std::exp(v - mx));
  Vec out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out[c] += s[i] / z * y[i * d + c];
  return out;
}

inline Vec predict(const Params& P, const Vec& h, int dt, int K) {
  Vec x = h;
  x.push_back(static_cast<double>(dt) / K);
  Vec a = affine(x, 1, P.at("predictor.l1.w"), P.at("predictor.l1.b"));
  for (auto& v : a) v = gelu(v);
  Vec b = affine(a, 1, P.at("predictor.l2.w"), P.at("predictor.l2.b"));
  for (auto& v : b) v = gelu(v);
  return affine(b, 1, P.at("predictor.l3.w"), P.at("predictor.l3.b"));
}

inline double head(const Params& P, const Vec& h) {
  return affine(layernorm(h, 1, P.at("head.norm.gain"), P.at("head.norm.bias")), 1, P.at("head.out.w"),
                P.at("head.out.b"))[0];
}

inline Vec unit(const Vec& v) {
  double ss = 1e-12;
  for (double x : v) ss += x * x;
  Vec out(v);
  for (auto& x : out) x /= std::sqrt(ss);
  return out;
}

// 100 * mean squared unit-vector error + 0.1 * regularizer + weighted BCE
// (positive weight 1) of the survival CDF from h_t.
inline double check_loss(const Params& P, const hepa::NetworkConfig& cfg, const hepa::WindowPolicy& policy,
                         const std::vector<hepa::AnchorRef>& anchors, const std::vector<int>& dts, const Vec& dirs,
                         int n_dirs, const std::vector<std::uint8_t>& y, const std::vector<std::uint8_t>& mask) {
  const std::size_t B = anchors.size(), d = cfg.d_model, D = policy.token_dim();
  const int K = cfg.K;
  hepa::ContextBatch ctx = hepa::build_context_batch(anchors, policy);
  hepa::TargetBatch tgt = hepa::build_target_batch(anchors, dts, ctx.stats, policy);
  const auto nc = static_cast<std::size_t>(ctx.tokens.dim(1)), nt = static_cast<std::size_t>(tgt.tokens.dim(1));

  std::vector<Vec> h_t, h_hat;
  double pred = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t pad = ctx.pad[b], n = nc - pad;
    auto src = ctx.tokens.values().subspan((b * nc + pad) * D, n * D);
    Vec enc = encode(P, cfg, Vec(src.begin(), src.end()), n, true);
    h_t.emplace_back(enc.end() - d, enc.end());
    h_hat.push_back(predict(P, h_t[b], dts[b], K));

    const auto len = static_cast<std::size_t>(tgt.length[b]);
    auto ts = tgt.tokens.values().subspan(b * nt * D, len * D);
    Vec star = pool(P, encode(P, cfg, Vec(ts.begin(), ts.end()), len, false), len, d);
    Vec u = unit(h_hat[b]), v = unit(star);
    for (std::size_t c = 0; c < d; ++c) pred += (u[c] - v[c]) * (u[c] - v[c]);
  }
  pred /= static_cast<double>(B * d);

  double sig = 0;
  for (int m = 0; m < n_dirs; ++m) {
    Vec proj(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < d; ++c) proj[b] += h_hat[b][c] * dirs[c * n_dirs + m];
    double mu = 0, var = 0, m3 = 0, m4 = 0;
    for (double v : proj) mu += v / B;
    for (double v : proj) {
      const double e = v - mu;
      var += e * e / B, m3 += e * e * e / B, m4 += e * e * e * e / B;
    }
    sig += mu * mu + std::pow(std::sqrt(var + 1e-4) - 1, 2) + m3 * m3 + (m4 - 3) * (m4 - 3);
  }
  sig /= n_dirs;

  double bce = 0;
  int n_valid = 0;
  for (std::size_t b = 0; b < B; ++b) {
    double log_surv = 0;
    for (int k = 1; k <= K; ++k) {
      const double logit = head(P, predict(P, h_t[b], k, K));
      log_surv -= logit > 30 ? logit : std::log1p(std::exp(logit));
      const double p = std::clamp(1.0 - std::exp(log_surv), 1e-7, 1.0 - 1e-7);
      const std::size_t i = b * K + (k - 1);
      if (!mask[i]) continue;
      ++n_valid;
      bce -= y[i] ? std::log(p) : std::log(1.0 - p);
    }
  }
  bce /= n_valid;
  return 100.0 * pred + 0.1 * sig + bce;
}

}  // namespace reference
