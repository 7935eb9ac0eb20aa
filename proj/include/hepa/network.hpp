#pragma once

// Weight-shared Transformer encoder (causal online pass, bidirectional target
// pass with attention pooling), horizon-conditioned predictor and event head.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hepa/tensor.hpp"

namespace hepa {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct NetworkConfig {
  std::int64_t d_in = 0;  // token width: channels * patch
  std::int64_t d_model = 256;
  int heads = 4;
  int layers = 2;
  std::int64_t ffn = 1024;
  float dropout = 0.1f;
  int K = 200;  // largest horizon; the predictor sees dt / K
};

struct Affine {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct Norm {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return layernorm(x, gain, bias); }
};

struct Block {
  Norm ln_attn;
  Affine qkv;
  Affine attn_out;
  Norm ln_ffn;
  Affine ffn_in;
  Affine ffn_out;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const NetworkConfig& cfg, std::mt19937_64& rng);

  // tokens [B, n, d_in], left-padded; pad[b] leading slots of item b are
  // padding. Returns the final-layer output at the last slot, [B, d].
  Tensor encode_causal(const Tensor& tokens, const std::vector<std::int64_t>& pad, bool training,
                       std::mt19937_64& rng) const;

  // tokens [B, n, d_in], right-padded; length[b] real tokens. Full attention
  // among real tokens, then attention pooling to [B, d]. `pool_weights`, when
  // given, receives the [B, n] pooling distribution.
  Tensor encode_target(const Tensor& tokens, const std::vector<std::int64_t>& length, bool training,
                       std::mt19937_64& rng, Tensor* pool_weights = nullptr) const;

  // Token-level outputs [B, n, d] under an explicit additive attention mask
  // of shape [B*heads, n, n]; `positions` [B, n] index the sinusoidal table.
  Tensor forward_tokens(const Tensor& tokens, const Tensor& attn_mask, const std::vector<std::int64_t>& positions,
                        bool training, std::mt19937_64& rng) const;

  NamedTensors parameters() const;
  const NetworkConfig& config() const { return cfg_; }
  template <class F>
  void visit(F&& f);

 private:
  NetworkConfig cfg_;
  Affine input_;
  std::vector<Block> blocks_;
  Norm final_;
  Tensor pool_query_;  // [d]
};

class Predictor {
 public:
  Predictor() = default;
  Predictor(const NetworkConfig& cfg, std::mt19937_64& rng);

  // h [N, d], one horizon per row (1 <= dt <= K) -> [N, d].
  Tensor forward(const Tensor& h, const std::vector<int>& dts) const;
  NamedTensors parameters() const;
  int K() const { return K_; }
  template <class F>
  void visit(F&& f) {
    f("predictor.l1.w", l1_.w), f("predictor.l1.b", l1_.b);
    f("predictor.l2.w", l2_.w), f("predictor.l2.b", l2_.b);
    f("predictor.l3.w", l3_.w), f("predictor.l3.b", l3_.b);
  }

 private:
  int K_ = 1;
  Affine l1_, l2_, l3_;
};

class EventHead {
 public:
  EventHead() = default;
  explicit EventHead(std::int64_t d, std::mt19937_64& rng);

  // [N, d] -> logits [N].
  Tensor forward(const Tensor& x) const;
  NamedTensors parameters() const;
  template <class F>
  void visit(F&& f) {
    f("head.norm.gain", norm_.gain), f("head.norm.bias", norm_.bias);
    f("head.out.w", out_.w), f("head.out.b", out_.b);
  }

 private:
  Norm norm_;
  Affine out_;
};

struct HepaModel {
  NetworkConfig config;
  Encoder encoder;
  Predictor predictor;
  EventHead head;

  HepaModel() = default;
  HepaModel(const NetworkConfig& cfg, std::uint64_t seed);

  NamedTensors parameters() const;
  // Independent storage with identical values and requires_grad flags.
  HepaModel clone() const;
  // Copies values by name; every parameter of this model must be present.
  void load_values(const NamedTensors& source);
};

template <class F>
void Encoder::visit(F&& f) {
  f("encoder.input.w", input_.w), f("encoder.input.b", input_.b);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "encoder.block" + std::to_string(i) + ".";
    Block& b = blocks_[i];
    f(p + "ln_attn.gain", b.ln_attn.gain), f(p + "ln_attn.bias", b.ln_attn.bias);
    f(p + "qkv.w", b.qkv.w), f(p + "qkv.b", b.qkv.b);
    f(p + "attn_out.w", b.attn_out.w), f(p + "attn_out.b", b.attn_out.b);
    f(p + "ln_ffn.gain", b.ln_ffn.gain), f(p + "ln_ffn.bias", b.ln_ffn.bias);
    f(p + "ffn_in.w", b.ffn_in.w), f(p + "ffn_in.b", b.ffn_in.b);
    f(p + "ffn_out.w", b.ffn_out.w), f(p + "ffn_out.b", b.ffn_out.b);
  }
  f("encoder.final.gain", final_.gain), f("encoder.final.bias", final_.bias);
  f("encoder.pool_query", pool_query_);
}

// Additive masks [B*heads, n, n]: causal with `pad` leading padded slots, or
// bidirectional over the first `length` slots.
Tensor causal_mask(const std::vector<std::int64_t>& pad, std::int64_t n, int heads);
Tensor bidirectional_mask(const std::vector<std::int64_t>& length, std::int64_t n, int heads);

std::int64_t count_params(const NamedTensors& params);
std::int64_t count_trainable(const NamedTensors& params);
void set_trainable(const NamedTensors& params, bool flag);

}  // namespace hepa
