#pragma once

// Raw windows to encoder tokens: instance normalization, channel-fusion
// patching and sinusoidal positions.

#include <cstdint>
#include <string>
#include <vector>

#include "hepa/tensor.hpp"

namespace hepa {

// Time-major block of observations: values[t * channels + s].
struct ContextWindow {
  std::int64_t steps = 0;
  std::int64_t channels = 0;
  std::vector<float> values;
  std::int64_t anchor_time = 0;
  std::vector<std::string> channel_names;

  float at(std::int64_t t, std::int64_t s) const { return values[t * channels + s]; }
};

struct NormStats {
  std::vector<float> mean;
  std::vector<float> std;  // population std, unguarded
  float eps = 1e-5f;

  float scale(std::size_t s) const;  // sqrt(std^2 + eps), the divisor actually used
};

struct TokenSequence {
  std::int64_t n_tokens = 0;
  std::int64_t token_dim = 0;
  std::vector<float> tokens;  // [n_tokens x token_dim]
  std::int64_t pad_steps = 0;  // zero steps prepended to reach a multiple of P
  NormStats norm_stats;
};

ContextWindow slice_window(const std::vector<float>& series, std::int64_t channels, std::int64_t begin,
                           std::int64_t end);

std::pair<ContextWindow, NormStats> instance_normalize(const ContextWindow& window, float eps = 1e-5f);
// Standardizes with externally supplied statistics.
ContextWindow apply_normalization(const ContextWindow& window, const NormStats& stats);
ContextWindow invert_normalization(const ContextWindow& window, const NormStats& stats);

// Token i holds steps [iP, (i+1)P) of the left-padded window; within a token
// the layout is channel-major (token[s*P + k]).
TokenSequence patchify(const ContextWindow& window, int patch);
ContextWindow unpatchify(const TokenSequence& seq, std::int64_t channels, int patch);

// Interleaved sin/cos, wavelength base 10000: [n_tokens x d].
Tensor positional_encoding(std::int64_t n_tokens, std::int64_t d);

}  // namespace hepa
