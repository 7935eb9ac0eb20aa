#pragma once

// Assembles encoder inputs for (episode, anchor) pairs: causal context
// windows and the future intervals used as pretraining targets.

#include <cstdint>
#include <vector>

#include "hepa/data.hpp"
#include "hepa/featurizer.hpp"
#include "hepa/network.hpp"
#include "hepa/tensor.hpp"

namespace hepa {

struct WindowPolicy {
  std::int64_t channels = 1;
  std::int64_t context_len = 512;
  int patch = 16;
  bool cycle_as_patch = false;  // one token per step, full history up to max_tokens
  std::int64_t max_tokens = 512;

  static WindowPolicy from_spec(const DatasetSpec& spec, std::int64_t channels);
  int token_patch() const { return cycle_as_patch ? 1 : patch; }
  std::int64_t token_dim() const { return channels * token_patch(); }
};

struct AnchorRef {
  const Episode* episode = nullptr;
  std::int64_t t = 0;
};

struct ContextBatch {
  Tensor tokens;  // [B, n, token_dim], left-padded
  std::vector<std::int64_t> pad;
  std::vector<NormStats> stats;
};

struct TargetBatch {
  Tensor tokens;  // [B, n, token_dim], right-padded
  std::vector<std::int64_t> length;
};

// Observations [begin, t] for the anchor under the policy.
ContextWindow context_window(const AnchorRef& a, const WindowPolicy& policy);
TokenSequence context_tokens(const AnchorRef& a, const WindowPolicy& policy);

ContextBatch build_context_batch(const std::vector<AnchorRef>& anchors, const WindowPolicy& policy);

// Interval (t, t+dt] of each anchor, standardized with that anchor's context
// statistics so the two views share one scale.
TargetBatch build_target_batch(const std::vector<AnchorRef>& anchors, const std::vector<int>& dts,
                               const std::vector<NormStats>& stats, const WindowPolicy& policy);

// Forward-only causal embeddings [N, d] in evaluation mode, in chunks.
Tensor embed_contexts(const Encoder& encoder, const std::vector<AnchorRef>& anchors, const WindowPolicy& policy,
                      std::size_t chunk = 256);

}  // namespace hepa
