#include "hepa/network.hpp"

#include <cmath>
#include <unordered_map>

#include "hepa/errors.hpp"
#include "hepa/featurizer.hpp"

namespace hepa {

namespace {

constexpr float kMasked = -1e9f;

Tensor uniform(Shape shape, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  Tensor t(std::move(shape), true);
  for (float& v : t.values()) v = dist(rng);
  return t;
}

// Framework-default initialization: weight and bias ~ U(-1/sqrt(in), 1/sqrt(in)).
Affine make_affine(std::int64_t in, std::int64_t out, std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  Affine a;
  a.w = uniform({in, out}, bound, rng);
  a.b = uniform({out}, bound, rng);
  return a;
}

Norm make_norm(std::int64_t d) { return {Tensor::full({d}, 1.0f, true), Tensor::full({d}, 0.0f, true)}; }

Tensor deep_copy(const Tensor& t) { return Tensor(t.shape(), std::vector<float>(t.values().begin(), t.values().end()), t.requires_grad()); }

template <class Module>
NamedTensors collect(const Module& m) {
  NamedTensors out;
  const_cast<Module&>(m).visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

template <class Module>
void deep_copy_all(Module& m) {
  m.visit([](const std::string&, Tensor& t) { t = deep_copy(t); });
}

}  // namespace

Encoder::Encoder(const NetworkConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.d_in < 1) throw ConfigError("network: token width d_in must be positive");
  if (cfg.d_model % cfg.heads != 0) throw ConfigError("network: d_model must be divisible by heads");
  if (cfg.d_model % 2 != 0) throw ConfigError("network: d_model must be even");
  const auto d = cfg.d_model;
  input_ = make_affine(cfg.d_in, d, rng);
  for (int i = 0; i < cfg.layers; ++i) {
    Block b;
    b.ln_attn = make_norm(d);
    b.qkv = make_affine(d, 3 * d, rng);
    b.attn_out = make_affine(d, d, rng);
    b.ln_ffn = make_norm(d);
    b.ffn_in = make_affine(d, cfg.ffn, rng);
    b.ffn_out = make_affine(cfg.ffn, d, rng);
    blocks_.push_back(std::move(b));
  }
  final_ = make_norm(d);
  pool_query_ = uniform({d}, 1.0f / std::sqrt(static_cast<float>(d)), rng);
}

Tensor Encoder::forward_tokens(const Tensor& tokens, const Tensor& attn_mask, const std::vector<std::int64_t>& positions,
                               bool training, std::mt19937_64& rng) const {
  if (tokens.rank() != 3 || tokens.dim(2) != cfg_.d_in) {
    throw ShapeError("encoder: expected tokens [B, n, " + std::to_string(cfg_.d_in) + "], got " +
                     shape_str(tokens.shape()));
  }
  const auto B = tokens.dim(0), n = tokens.dim(1), d = cfg_.d_model;
  const std::int64_t H = cfg_.heads, dh = d / H;
  if (n < 1) throw ContractError("encoder: no tokens");
  if (static_cast<std::int64_t>(positions.size()) != B * n) throw ShapeError("encoder: positions must be [B, n]");

  std::int64_t max_pos = 0;
  for (auto p : positions) max_pos = std::max(max_pos, p);
  const Tensor table = positional_encoding(max_pos + 1, d);
  Tensor pe(Shape{B, n, d});
  for (std::int64_t i = 0; i < B * n; ++i) {
    std::copy_n(table.values().data() + positions[i] * d, d, pe.values().data() + i * d);
  }

  Tensor x = add(input_(tokens), pe);
  x = dropout(x, cfg_.dropout, training, rng);
  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  for (const Block& blk : blocks_) {
    Tensor qkv = blk.qkv(blk.ln_attn(x));
    qkv = permute(reshape(qkv, {B, n, 3, H, dh}), {2, 0, 3, 1, 4});  // [3, B, H, n, dh]
    Tensor q = reshape(select(qkv, 0, 0), {B * H, n, dh});
    Tensor k = reshape(select(qkv, 0, 1), {B * H, n, dh});
    Tensor v = reshape(select(qkv, 0, 2), {B * H, n, dh});
    Tensor probs = softmax(scale(bmm(q, k, true), inv_sqrt_dh), attn_mask);
    Tensor ctx = permute(reshape(bmm(probs, v), {B, H, n, dh}), {0, 2, 1, 3});
    Tensor attn = blk.attn_out(reshape(ctx, {B, n, d}));
    x = add(x, dropout(attn, cfg_.dropout, training, rng));
    Tensor ff = blk.ffn_out(gelu(blk.ffn_in(blk.ln_ffn(x))));
    x = add(x, dropout(ff, cfg_.dropout, training, rng));
  }
  return final_(x);
}

Tensor Encoder::encode_causal(const Tensor& tokens, const std::vector<std::int64_t>& pad, bool training,
                              std::mt19937_64& rng) const {
  if (tokens.rank() != 3) throw ShapeError("encode_causal: tokens must be [B, n, d_in]");
  const auto B = tokens.dim(0), n = tokens.dim(1);
  if (static_cast<std::int64_t>(pad.size()) != B) throw ShapeError("encode_causal: one pad count per item");
  Tensor mask = causal_mask(pad, n, cfg_.heads);
  std::vector<std::int64_t> positions(static_cast<std::size_t>(B * n), 0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < n; ++i) positions[b * n + i] = std::max<std::int64_t>(0, i - pad[b]);
  Tensor y = forward_tokens(tokens, mask, positions, training, rng);
  return select(y, 1, n - 1);
}

Tensor Encoder::encode_target(const Tensor& tokens, const std::vector<std::int64_t>& length, bool training,
                              std::mt19937_64& rng, Tensor* pool_weights) const {
  if (tokens.rank() != 3) throw ShapeError("encode_target: tokens must be [B, n, d_in]");
  const auto B = tokens.dim(0), n = tokens.dim(1), d = cfg_.d_model;
  if (static_cast<std::int64_t>(length.size()) != B) throw ShapeError("encode_target: one length per item");
  Tensor mask = bidirectional_mask(length, n, cfg_.heads);
  Tensor pool_mask(Shape{B, n});
  std::vector<std::int64_t> positions(static_cast<std::size_t>(B * n), 0);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < n; ++i) {
      positions[b * n + i] = i;
      pool_mask.values()[b * n + i] = i < length[b] ? 0.0f : kMasked;
    }
  }
  Tensor y = forward_tokens(tokens, mask, positions, training, rng);  // [B, n, d]
  Tensor scores = scale(reshape(linear(y, reshape(pool_query_, {d, 1}), Tensor()), {B, n}),
                        1.0f / std::sqrt(static_cast<float>(d)));
  Tensor w = softmax(scores, pool_mask);
  if (pool_weights) *pool_weights = w;
  return reshape(bmm(reshape(w, {B, 1, n}), y), {B, d});
}

NamedTensors Encoder::parameters() const { return collect(*this); }

Predictor::Predictor(const NetworkConfig& cfg, std::mt19937_64& rng) : K_(cfg.K) {
  if (cfg.K < 1) throw ConfigError("network: K must be >= 1");
  const auto d = cfg.d_model;
  l1_ = make_affine(d + 1, d, rng);
  l2_ = make_affine(d, d, rng);
  l3_ = make_affine(d, d, rng);
}

Tensor Predictor::forward(const Tensor& h, const std::vector<int>& dts) const {
  if (h.rank() != 2 || h.dim(0) != static_cast<std::int64_t>(dts.size())) {
    throw ShapeError("predict: expected h [N, d] with one horizon per row");
  }
  Tensor dt_col(Shape{h.dim(0), 1});
  for (std::size_t i = 0; i < dts.size(); ++i) {
    if (dts[i] < 1 || dts[i] > K_) {
      throw ContractError("predict: horizon " + std::to_string(dts[i]) + " outside [1, " + std::to_string(K_) + "]");
    }
    dt_col.values()[i] = static_cast<float>(dts[i]) / static_cast<float>(K_);
  }
  Tensor x = concat_last({h, dt_col});
  return l3_(gelu(l2_(gelu(l1_(x)))));
}

NamedTensors Predictor::parameters() const { return collect(*this); }

EventHead::EventHead(std::int64_t d, std::mt19937_64& rng) : norm_(make_norm(d)), out_(make_affine(d, 1, rng)) {}

Tensor EventHead::forward(const Tensor& x) const {
  Tensor logit = out_(norm_(x));
  return reshape(logit, {logit.dim(0)});
}

NamedTensors EventHead::parameters() const { return collect(*this); }

HepaModel::HepaModel(const NetworkConfig& cfg, std::uint64_t seed) : config(cfg) {
  std::mt19937_64 rng(seed);
  encoder = Encoder(cfg, rng);
  predictor = Predictor(cfg, rng);
  head = EventHead(cfg.d_model, rng);
}

NamedTensors HepaModel::parameters() const {
  NamedTensors all = encoder.parameters();
  for (auto& p : predictor.parameters()) all.push_back(p);
  for (auto& p : head.parameters()) all.push_back(p);
  return all;
}

HepaModel HepaModel::clone() const {
  HepaModel copy = *this;
  deep_copy_all(copy.encoder);
  deep_copy_all(copy.predictor);
  deep_copy_all(copy.head);
  return copy;
}

void HepaModel::load_values(const NamedTensors& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  for (auto& [name, t] : parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("missing parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                       shape_str(t.shape()));
    }
    std::copy(it->second->values().begin(), it->second->values().end(), t.values().begin());
  }
}

Tensor causal_mask(const std::vector<std::int64_t>& pad, std::int64_t n, int heads) {
  const auto B = static_cast<std::int64_t>(pad.size());
  Tensor mask(Shape{B * heads, n, n});
  auto mv = mask.values();
  for (std::int64_t b = 0; b < B; ++b) {
    if (pad[b] < 0 || pad[b] >= n) throw ContractError("encode_causal: item has no real tokens");
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        // Padded query slots attend to themselves only; their outputs are never read.
        const bool visible = j <= i && (j >= pad[b] || j == i);
        for (std::int64_t h = 0; h < heads; ++h) mv[((b * heads + h) * n + i) * n + j] = visible ? 0.0f : kMasked;
      }
  }
  return mask;
}

Tensor bidirectional_mask(const std::vector<std::int64_t>& length, std::int64_t n, int heads) {
  const auto B = static_cast<std::int64_t>(length.size());
  Tensor mask(Shape{B * heads, n, n});
  auto mv = mask.values();
  for (std::int64_t b = 0; b < B; ++b) {
    if (length[b] < 1 || length[b] > n) throw ContractError("encode_target: empty target interval");
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const bool visible = j < length[b] || j == i;
        for (std::int64_t h = 0; h < heads; ++h) mv[((b * heads + h) * n + i) * n + j] = visible ? 0.0f : kMasked;
      }
  }
  return mask;
}

std::int64_t count_params(const NamedTensors& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

std::int64_t count_trainable(const NamedTensors& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params)
    if (t.requires_grad()) n += t.numel();
  return n;
}

void set_trainable(const NamedTensors& params, bool flag) {
  for (auto [name, t] : params) t.set_requires_grad(flag);
}

}  // namespace hepa
