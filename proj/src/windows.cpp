#include "hepa/windows.hpp"

#include <algorithm>

#include "hepa/errors.hpp"

namespace hepa {

WindowPolicy WindowPolicy::from_spec(const DatasetSpec& spec, std::int64_t channels) {
  WindowPolicy p;
  p.channels = channels;
  p.context_len = spec.context_len;
  p.patch = spec.patch;
  p.cycle_as_patch = spec.cycle_as_patch;
  p.max_tokens = spec.max_tokens;
  if (p.patch < 1) throw ConfigError("patch must be >= 1");
  if (!p.cycle_as_patch && p.context_len < 1) throw ConfigError("context_len must be >= 1");
  if (p.cycle_as_patch && p.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  return p;
}

ContextWindow context_window(const AnchorRef& a, const WindowPolicy& policy) {
  const Episode& ep = *a.episode;
  if (a.t < 0 || a.t >= ep.steps) throw ContractError("anchor outside its episode");
  const std::int64_t span = policy.cycle_as_patch ? policy.max_tokens : policy.context_len;
  const std::int64_t begin = std::max<std::int64_t>(0, a.t + 1 - span);
  return slice_window(ep.values, ep.channels, begin, a.t + 1);
}

TokenSequence context_tokens(const AnchorRef& a, const WindowPolicy& policy) {
  auto [normed, stats] = instance_normalize(context_window(a, policy));
  TokenSequence seq = patchify(normed, policy.token_patch());
  seq.norm_stats = std::move(stats);
  return seq;
}

ContextBatch build_context_batch(const std::vector<AnchorRef>& anchors, const WindowPolicy& policy) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(anchors.size());
  std::int64_t n = 0;
  for (const auto& a : anchors) {
    seqs.push_back(context_tokens(a, policy));
    n = std::max(n, seqs.back().n_tokens);
  }
  const auto B = static_cast<std::int64_t>(anchors.size());
  const auto D = policy.token_dim();
  ContextBatch batch;
  batch.tokens = Tensor(Shape{B, n, D});
  auto v = batch.tokens.values();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = seqs[b];
    const auto pad = n - s.n_tokens;
    std::copy(s.tokens.begin(), s.tokens.end(), v.begin() + (b * n + pad) * D);
    batch.pad.push_back(pad);
    batch.stats.push_back(s.norm_stats);
  }
  return batch;
}

TargetBatch build_target_batch(const std::vector<AnchorRef>& anchors, const std::vector<int>& dts,
                               const std::vector<NormStats>& stats, const WindowPolicy& policy) {
  if (anchors.size() != dts.size() || anchors.size() != stats.size()) {
    throw ShapeError("build_target_batch: anchors, horizons and stats differ in count");
  }
  std::vector<TokenSequence> seqs;
  seqs.reserve(anchors.size());
  std::int64_t n = 0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Episode& ep = *anchors[i].episode;
    const auto t = anchors[i].t;
    if (dts[i] < 1 || t + dts[i] > ep.steps - 1) throw ContractError("target interval crosses the episode end");
    ContextWindow w = apply_normalization(slice_window(ep.values, ep.channels, t + 1, t + 1 + dts[i]), stats[i]);
    seqs.push_back(patchify(w, policy.token_patch()));
    n = std::max(n, seqs.back().n_tokens);
  }
  const auto B = static_cast<std::int64_t>(anchors.size());
  const auto D = policy.token_dim();
  TargetBatch batch;
  batch.tokens = Tensor(Shape{B, n, D});
  auto v = batch.tokens.values();
  for (std::int64_t b = 0; b < B; ++b) {
    std::copy(seqs[b].tokens.begin(), seqs[b].tokens.end(), v.begin() + b * n * D);
    batch.length.push_back(seqs[b].n_tokens);
  }
  return batch;
}

Tensor embed_contexts(const Encoder& encoder, const std::vector<AnchorRef>& anchors, const WindowPolicy& policy,
                      std::size_t chunk) {
  NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < anchors.size(); begin += chunk) {
    const auto end = std::min(anchors.size(), begin + chunk);
    std::vector<AnchorRef> slice(anchors.begin() + begin, anchors.begin() + end);
    ContextBatch cb = build_context_batch(slice, policy);
    parts.push_back(encoder.encode_causal(cb.tokens, cb.pad, false, unused));
  }
  if (parts.empty()) return Tensor(Shape{0, encoder.config().d_model});
  return concat_rows(parts);
}

}  // namespace hepa
