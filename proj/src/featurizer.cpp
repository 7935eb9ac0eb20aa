#include "hepa/featurizer.hpp"

#include <cmath>

#include "hepa/errors.hpp"

namespace hepa {

float NormStats::scale(std::size_t s) const { return std::sqrt(std[s] * std[s] + eps); }

ContextWindow slice_window(const std::vector<float>& series, std::int64_t channels, std::int64_t begin,
                           std::int64_t end) {
  const auto steps = channels == 0 ? 0 : static_cast<std::int64_t>(series.size()) / channels;
  if (begin < 0 || end > steps || begin >= end) {
    throw ContractError("slice_window: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  }
  ContextWindow w;
  w.steps = end - begin;
  w.channels = channels;
  w.anchor_time = end - 1;
  w.values.assign(series.begin() + begin * channels, series.begin() + end * channels);
  return w;
}

std::pair<ContextWindow, NormStats> instance_normalize(const ContextWindow& window, float eps) {
  if (window.steps < 1) throw ContractError("instance_normalize: empty window");
  const auto S = window.channels;
  const auto T = window.steps;
  NormStats stats;
  stats.eps = eps;
  stats.mean.resize(S);
  stats.std.resize(S);
  for (std::int64_t s = 0; s < S; ++s) {
    double mu = 0.0;
    for (std::int64_t t = 0; t < T; ++t) mu += window.at(t, s);
    mu /= static_cast<double>(T);
    double var = 0.0;
    for (std::int64_t t = 0; t < T; ++t) var += (window.at(t, s) - mu) * (window.at(t, s) - mu);
    var /= static_cast<double>(T);
    stats.mean[s] = static_cast<float>(mu);
    stats.std[s] = static_cast<float>(std::sqrt(var));
  }
  return {apply_normalization(window, stats), stats};
}

ContextWindow apply_normalization(const ContextWindow& window, const NormStats& stats) {
  if (static_cast<std::int64_t>(stats.mean.size()) != window.channels) {
    throw ShapeError("apply_normalization: stats cover " + std::to_string(stats.mean.size()) + " channels, window has " +
                     std::to_string(window.channels));
  }
  ContextWindow out = window;
  for (std::int64_t t = 0; t < window.steps; ++t)
    for (std::int64_t s = 0; s < window.channels; ++s)
      out.values[t * window.channels + s] = (window.at(t, s) - stats.mean[s]) / stats.scale(s);
  return out;
}

ContextWindow invert_normalization(const ContextWindow& window, const NormStats& stats) {
  ContextWindow out = window;
  for (std::int64_t t = 0; t < window.steps; ++t)
    for (std::int64_t s = 0; s < window.channels; ++s)
      out.values[t * window.channels + s] = window.at(t, s) * stats.scale(s) + stats.mean[s];
  return out;
}

TokenSequence patchify(const ContextWindow& window, int patch) {
  if (patch < 1) throw ContractError("patchify: patch size must be >= 1");
  if (window.steps < 1 || window.channels < 1) throw ContractError("patchify: empty window");
  const auto S = window.channels;
  TokenSequence seq;
  seq.n_tokens = (window.steps + patch - 1) / patch;
  seq.pad_steps = seq.n_tokens * patch - window.steps;
  seq.token_dim = S * patch;
  seq.tokens.assign(static_cast<std::size_t>(seq.n_tokens * seq.token_dim), 0.0f);
  for (std::int64_t t = 0; t < window.steps; ++t) {
    const auto slot = t + seq.pad_steps;
    const auto tok = slot / patch;
    const auto k = slot % patch;
    for (std::int64_t s = 0; s < S; ++s) seq.tokens[tok * seq.token_dim + s * patch + k] = window.at(t, s);
  }
  return seq;
}

ContextWindow unpatchify(const TokenSequence& seq, std::int64_t channels, int patch) {
  if (channels * patch != seq.token_dim) throw ShapeError("unpatchify: token width does not match channels x patch");
  ContextWindow w;
  w.channels = channels;
  w.steps = seq.n_tokens * patch - seq.pad_steps;
  w.values.resize(static_cast<std::size_t>(w.steps * channels));
  for (std::int64_t t = 0; t < w.steps; ++t) {
    const auto slot = t + seq.pad_steps;
    for (std::int64_t s = 0; s < channels; ++s)
      w.values[t * channels + s] = seq.tokens[(slot / patch) * seq.token_dim + s * patch + slot % patch];
  }
  w.anchor_time = w.steps - 1;
  return w;
}

Tensor positional_encoding(std::int64_t n_tokens, std::int64_t d) {
  if (d % 2 != 0) throw ContractError("positional_encoding: d must be even");
  Tensor pe(Shape{n_tokens, d});
  auto v = pe.values();
  for (std::int64_t pos = 0; pos < n_tokens; ++pos) {
    for (std::int64_t i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      v[pos * d + 2 * i] = static_cast<float>(std::sin(pos * freq));
      v[pos * d + 2 * i + 1] = static_cast<float>(std::cos(pos * freq));
    }
  }
  return pe;
}

}  // namespace hepa
