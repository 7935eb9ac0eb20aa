#include "hepa/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "hepa/errors.hpp"

namespace hepa {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

constexpr float kExpInputMax = 88.0f;

bool tracks(const Tensor& t) { return t.defined() && t.requires_grad(); }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (tracks(*t)) return true;
  }
  return false;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// Right operand either matches or is a suffix of the left operand's shape.
std::int64_t broadcast_inner(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) return b.numel();
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
}

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  const std::int64_t inner = broadcast_inner(a, b, name);
  const std::int64_t n = a.numel();
  auto av = a.values();
  auto bv = b.values();
  std::vector<float> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % inner]);
  const bool rec = should_record({&a, &b});
  Tensor y(a.shape(), std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [a, b, y, inner, n, bwd]() {
      auto g = y.grad();
      auto av = a.values();
      auto bv = b.values();
      auto yv = y.values();
      const bool ga = a.requires_grad();
      const bool gb = b.requires_grad();
      std::span<float> da = ga ? a.grad() : std::span<float>();
      std::span<float> db = gb ? b.grad() : std::span<float>();
      for (std::int64_t i = 0; i < n; ++i) {
        float dx = 0.0f, dy = 0.0f;
        bwd(av[i], bv[i % inner], yv[i], g[i], dx, dy);
        if (ga) da[i] += dx;
        if (gb) db[i % inner] += dy;
      }
    });
  }
  return y;
}

// `deriv(x, y)` is dy/dx evaluated at the saved input and output.
template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  require_defined(x, name);
  auto xv = x.values();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const bool rec = should_record({&x});
  Tensor y(x.shape(), std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, deriv]() {
      auto g = y.grad();
      auto xv = x.values();
      auto yv = y.values();
      auto dx = x.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g[i] * deriv(xv[i], yv[i]);
    });
  }
  return y;
}

float stable_sigmoid(float v) {
  if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
  const float e = std::exp(v);
  return e / (1.0f + e);
}

std::int64_t rows_of(const Tensor& x) {
  const std::int64_t last = x.dim(-1);
  return last == 0 ? 0 : x.numel() / last;
}

}  // namespace

// ---------------------------------------------------------------------------

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<detail::TensorImpl>()) {
  const auto n = numel_of(shape);
  impl_->shape = std::move(shape);
  impl_->values.assign(static_cast<std::size_t>(n), 0.0f);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->values.assign(values.begin(), values.end());
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("shape() of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->values[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<float> Tensor::grad() const {
  if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
  Tensor out(shape(), false);
  out.impl_->values = impl_->values;
  return out;
}

// ---------------------------------------------------------------------------

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const Tensor& output, BackwardFn fn) { entries_.push_back({output, std::move(fn)}); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a tensor that is not attached to the tape");
  }
  loss.grad()[0] = 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->fn();
  }
  entries_.clear();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) { Tape::active().backward(loss); }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](float x, float y) { return x + y; },
      [](float, float, float, float g, float& dx, float& dy) {
        dx = g;
        dy = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](float x, float y) { return x - y; },
      [](float, float, float, float g, float& dx, float& dy) {
        dx = g;
        dy = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](float x, float y) { return x * y; },
      [](float x, float y, float, float g, float& dx, float& dy) {
        dx = g * y;
        dy = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](float x, float y) { return x / y; },
      [](float, float y, float z, float g, float& dx, float& dy) {
        dx = g / y;
        dy = -g * z / y;
      });
}

Tensor scale(const Tensor& x, float factor) {
  return unary_op(
      x, "scale", [factor](float v) { return v * factor; }, [factor](float, float) { return factor; });
}

Tensor add_scalar(const Tensor& x, float value) {
  return unary_op(
      x, "add_scalar", [value](float v) { return v + value; }, [](float, float) { return 1.0f; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", stable_sigmoid, [](float, float y) { return y * (1.0f - y); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x, "softplus", [](float v) { return std::max(v, 0.0f) + std::log1p(std::exp(-std::fabs(v))); },
      [](float v, float) { return stable_sigmoid(v); });
}

Tensor gelu(const Tensor& x) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kA = 0.044715f;
  return unary_op(
      x, "gelu",
      [](float v) { return 0.5f * v * (1.0f + std::tanh(kC * (v + kA * v * v * v))); },
      [](float v, float) {
        const float t = std::tanh(kC * (v + kA * v * v * v));
        return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * kC * (1.0f + 3.0f * kA * v * v);
      });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](float v) { return std::exp(std::min(v, kExpInputMax)); },
      [](float v, float y) { return v > kExpInputMax ? 0.0f : y; });
}

Tensor log(const Tensor& x) {
  static constexpr float kTiny = std::numeric_limits<float>::min();
  return unary_op(
      x, "log", [](float v) { return std::log(std::max(v, kTiny)); },
      [](float v, float) { return 1.0f / std::max(v, kTiny); });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, "abs", [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, "square", [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor pow(const Tensor& x, float exponent) {
  return unary_op(
      x, "pow", [exponent](float v) { return std::pow(v, exponent); },
      [exponent](float v, float) { return exponent * std::pow(v, exponent - 1.0f); });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  return unary_op(
      x, "clamp", [lo, hi](float v) { return std::clamp(v, lo, hi); },
      [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

// ---------------------------------------------------------------------------
// Products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool rec = should_record({&a, &b});
  Tensor c(Shape{m, n}, rec);
  MatMap(c.values().data(), m, n).noalias() =
      ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  if (rec) {
    Tape::active().record(c, [a, b, c, m, k, n]() {
      ConstMatMap dc(c.grad().data(), m, n);
      if (a.requires_grad()) {
        MatMap(a.grad().data(), m, k).noalias() += dc * ConstMatMap(b.values().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MatMap(b.grad().data(), k, n).noalias() += ConstMatMap(a.values().data(), m, k).transpose() * dc;
      }
    });
  }
  return c;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const auto n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k) {
    throw ShapeError("bmm: inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool rec = should_record({&a, &b});
  Tensor c(Shape{g, m, n}, rec);
  const float* ap = a.values().data();
  const float* bp = b.values().data();
  float* cp = c.values().data();
  for (std::int64_t i = 0; i < g; ++i) {
    ConstMatMap ai(ap + i * m * k, m, k);
    MatMap ci(cp + i * m * n, m, n);
    if (transpose_b) {
      ci.noalias() = ai * ConstMatMap(bp + i * n * k, n, k).transpose();
    } else {
      ci.noalias() = ai * ConstMatMap(bp + i * k * n, k, n);
    }
  }
  if (rec) {
    Tape::active().record(c, [a, b, c, g, m, k, n, transpose_b]() {
      const float* ap = a.values().data();
      const float* bp = b.values().data();
      const float* gp = c.grad().data();
      float* dap = a.requires_grad() ? a.grad().data() : nullptr;
      float* dbp = b.requires_grad() ? b.grad().data() : nullptr;
      for (std::int64_t i = 0; i < g; ++i) {
        ConstMatMap dc(gp + i * m * n, m, n);
        ConstMatMap ai(ap + i * m * k, m, k);
        if (transpose_b) {
          ConstMatMap bi(bp + i * n * k, n, k);
          if (dap) MatMap(dap + i * m * k, m, k).noalias() += dc * bi;
          if (dbp) MatMap(dbp + i * n * k, n, k).noalias() += dc.transpose() * ai;
        } else {
          ConstMatMap bi(bp + i * k * n, k, n);
          if (dap) MatMap(dap + i * m * k, m, k).noalias() += dc * bi.transpose();
          if (dbp) MatMap(dbp + i * k * n, k, n).noalias() += ai.transpose() * dc;
        }
      }
    });
  }
  return c;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const auto in = weight.dim(0), out = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match output width " +
                     std::to_string(out));
  }
  const auto rows = rows_of(x);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  const bool rec = should_record({&x, &weight, &bias});
  Tensor y(out_shape, rec);
  MatMap ym(y.values().data(), rows, out);
  ym.noalias() = ConstMatMap(x.values().data(), rows, in) * ConstMatMap(weight.values().data(), in, out);
  if (bias.defined()) {
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.values().data(), out);
  }
  if (rec) {
    Tape::active().record(y, [x, weight, bias, y, rows, in, out]() {
      ConstMatMap dy(y.grad().data(), rows, out);
      if (x.requires_grad()) {
        MatMap(x.grad().data(), rows, in).noalias() +=
            dy * ConstMatMap(weight.values().data(), in, out).transpose();
      }
      if (weight.requires_grad()) {
        MatMap(weight.grad().data(), in, out).noalias() +=
            ConstMatMap(x.values().data(), rows, in).transpose() * dy;
      }
      if (bias.defined() && bias.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXf>(bias.grad().data(), out) += dy.colwise().sum();
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Row-wise

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  require_defined(x, "layernorm");
  if (!(eps > 0.0f)) throw ContractError("layernorm: eps must be positive");
  const auto d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layernorm: affine parameters do not match width " + std::to_string(d));
  }
  const auto rows = rows_of(x);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<float> xhat(xv.size());
  std::vector<float> rstd(static_cast<std::size_t>(rows));
  std::vector<float> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<float>(rs);
    for (std::int64_t j = 0; j < d; ++j) {
      const float h = static_cast<float>((row[j] - mu) * rs);
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const bool rec = should_record({&x, &gain, &bias});
  Tensor y(x.shape(), std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, gain, bias, y, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)]() {
      auto g = y.grad();
      auto gv = gain.values();
      std::span<float> dx = x.requires_grad() ? x.grad() : std::span<float>();
      std::span<float> dg = gain.requires_grad() ? gain.grad() : std::span<float>();
      std::span<float> db = bias.requires_grad() ? bias.grad() : std::span<float>();
      for (std::int64_t r = 0; r < rows; ++r) {
        const float* gr = g.data() + r * d;
        const float* hr = xhat.data() + r * d;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const double dh = static_cast<double>(gr[j]) * gv[j];
          mean_dh += dh;
          mean_dh_h += dh * hr[j];
          if (!dg.empty()) dg[j] += gr[j] * hr[j];
          if (!db.empty()) db[j] += gr[j];
        }
        if (dx.empty()) continue;
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        for (std::int64_t j = 0; j < d; ++j) {
          const double dh = static_cast<double>(gr[j]) * gv[j];
          dx[r * d + j] += static_cast<float>(rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h));
        }
      }
    });
  }
  return y;
}

Tensor l2_normalize(const Tensor& x, float eps) {
  require_defined(x, "l2_normalize");
  const auto d = x.dim(-1);
  const auto rows = rows_of(x);
  auto xv = x.values();
  std::vector<float> out(xv.size());
  std::vector<float> norms(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ss += static_cast<double>(xv[r * d + j]) * xv[r * d + j];
    const double n = std::sqrt(ss + eps);
    norms[r] = static_cast<float>(n);
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = static_cast<float>(xv[r * d + j] / n);
  }
  const bool rec = should_record({&x});
  Tensor y(x.shape(), std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, rows, d, norms = std::move(norms)]() {
      auto g = y.grad();
      auto yv = y.values();
      auto dx = x.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(g[r * d + j]) * yv[r * d + j];
        for (std::int64_t j = 0; j < d; ++j) {
          dx[r * d + j] += static_cast<float>((g[r * d + j] - yv[r * d + j] * dot) / norms[r]);
        }
      }
    });
  }
  return y;
}

Tensor softmax(const Tensor& x, const Tensor& mask) {
  require_defined(x, "softmax");
  if (mask.defined() && mask.numel() != x.numel()) {
    throw ShapeError("softmax: mask " + shape_str(mask.shape()) + " does not match " + shape_str(x.shape()));
  }
  const auto d = x.dim(-1);
  const auto rows = rows_of(x);
  auto xv = x.values();
  std::vector<float> out(xv.size());
  std::vector<float> logits(static_cast<std::size_t>(d));
  for (std::int64_t r = 0; r < rows; ++r) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t j = 0; j < d; ++j) {
      logits[j] = xv[r * d + j] + (mask.defined() ? mask.values()[r * d + j] : 0.0f);
      mx = std::max(mx, logits[j]);
    }
    double total = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const float e = std::exp(logits[j] - mx);
      out[r * d + j] = e;
      total += e;
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] *= inv;
  }
  const bool rec = should_record({&x});
  Tensor y(x.shape(), std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, rows, d]() {
      auto g = y.grad();
      auto yv = y.values();
      auto dx = x.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(g[r * d + j]) * yv[r * d + j];
        for (std::int64_t j = 0; j < d; ++j) {
          dx[r * d + j] += yv[r * d + j] * static_cast<float>(g[r * d + j] - dot);
        }
      }
    });
  }
  return y;
}

Tensor cumsum_last(const Tensor& x) {
  require_defined(x, "cumsum_last");
  const auto d = x.dim(-1);
  const auto rows = rows_of(x);
  auto xv = x.values();
  std::vector<float> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      acc += xv[r * d + j];
      out[r * d + j] = static_cast<float>(acc);
    }
  }
  const bool rec = should_record({&x});
  Tensor y(x.shape(), std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, rows, d]() {
      auto g = y.grad();
      auto dx = x.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::int64_t j = d - 1; j >= 0; --j) {
          acc += g[r * d + j];
          dx[r * d + j] += static_cast<float>(acc);
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  const bool rec = should_record({&x});
  Tensor y = Tensor::scalar(static_cast<float>(acc), rec);
  if (rec) {
    Tape::active().record(y, [x, y]() {
      const float g = y.grad()[0];
      for (float& d : x.grad()) d += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor column_mean(const Tensor& x) {
  require_defined(x, "column_mean");
  const auto c = x.dim(-1);
  const auto rows = rows_of(x);
  if (rows == 0) throw ContractError("column_mean of empty tensor");
  auto xv = x.values();
  std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) acc[j] += xv[r * c + j];
  std::vector<float> out(static_cast<std::size_t>(c));
  for (std::int64_t j = 0; j < c; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(rows));
  const bool rec = should_record({&x});
  Tensor y(Shape{c}, std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, rows, c]() {
      auto g = y.grad();
      auto dx = x.grad();
      const float inv = 1.0f / static_cast<float>(rows);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j) dx[r * c + j] += g[j] * inv;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  const bool rec = should_record({&x});
  Tensor y(std::move(shape), std::vector<float>(x.values().begin(), x.values().end()), rec);
  if (rec) {
    Tape::active().record(y, [x, y]() {
      auto g = y.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
  }
  return y;
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  require_defined(x, "permute");
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute: order rank mismatch");
  std::vector<int> seen(order.begin(), order.end());
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < r; ++i) {
    if (seen[i] != i) throw ShapeError("permute: order is not a permutation");
  }
  const Shape& in_shape = x.shape();
  std::vector<std::int64_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(r);
  std::vector<std::int64_t> src_stride(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[order[i]];
    src_stride[i] = in_strides[order[i]];
  }
  // index[i] maps output position i to the flat input offset.
  const auto n = x.numel();
  std::vector<std::int64_t> index(static_cast<std::size_t>(n));
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t offset = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    index[i] = offset;
    for (int ax = r - 1; ax >= 0; --ax) {
      ++counter[ax];
      offset += src_stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      offset -= src_stride[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }
  auto xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = xv[index[i]];
  const bool rec = should_record({&x});
  Tensor y(out_shape, std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, index = std::move(index)]() {
      auto g = y.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < index.size(); ++i) dx[index[i]] += g[i];
    });
  }
  return y;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_last: no inputs");
  const Shape& lead = parts.front().shape();
  const auto rows = rows_of(parts.front());
  std::int64_t width = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    require_defined(p, "concat_last");
    if (p.rank() != static_cast<int>(lead.size()) || !std::equal(lead.begin(), lead.end() - 1, p.shape().begin())) {
      throw ShapeError("concat_last: leading shapes differ " + shape_str(lead) + " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.dim(-1));
    width += p.dim(-1);
  }
  Shape out_shape = lead;
  out_shape.back() = width;
  bool rec = false;
  for (const auto& p : parts) rec = rec || should_record({&p});
  Tensor y(out_shape, rec);
  auto yv = y.values();
  std::int64_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy_n(pv.data() + r * widths[k], widths[k], yv.data() + r * width + col);
    col += widths[k];
  }
  if (rec) {
    Tape::active().record(y, [parts, y, rows, width, widths]() {
      auto g = y.grad();
      std::int64_t col = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (parts[k].requires_grad()) {
          auto dp = parts[k].grad();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < widths[k]; ++j) dp[r * widths[k] + j] += g[r * width + col + j];
        }
        col += widths[k];
      }
    });
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw ShapeError("concat_rows: scalar input");
  std::int64_t total = 0;
  bool rec = false;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.rank() != static_cast<int>(first.size()) || !std::equal(first.begin() + 1, first.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_rows: trailing shapes differ " + shape_str(first) + " vs " + shape_str(p.shape()));
    }
    total += p.dim(0);
    rec = rec || should_record({&p});
  }
  Shape out_shape = first;
  out_shape[0] = total;
  Tensor y(out_shape, rec);
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), y.values().begin() + offset);
    offset += p.numel();
  }
  if (rec) {
    Tape::active().record(y, [parts, y]() {
      auto g = y.grad();
      std::int64_t offset = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          auto dp = p.grad();
          for (std::int64_t i = 0; i < p.numel(); ++i) dp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return y;
}

Tensor select(const Tensor& x, int axis, std::int64_t index) {
  require_defined(x, "select");
  const int r = x.rank();
  const int a = axis < 0 ? axis + r : axis;
  const auto extent = x.dim(a);
  if (index < 0 || index >= extent) throw ShapeError("select: index out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= x.shape()[i];
  for (int i = a + 1; i < r; ++i) inner *= x.shape()[i];
  Shape out_shape;
  for (int i = 0; i < r; ++i)
    if (i != a) out_shape.push_back(x.shape()[i]);
  auto xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(outer * inner));
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * extent + index) * inner, inner, out.data() + o * inner);
  const bool rec = should_record({&x});
  Tensor y(out_shape, std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, outer, inner, extent, index]() {
      auto g = y.grad();
      auto dx = x.grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) dx[(o * extent + index) * inner + i] += g[o * inner + i];
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  require_defined(x, "gather_rows");
  if (x.rank() < 1) throw ShapeError("gather_rows: scalar input");
  const auto n = x.dim(0);
  const auto width = n == 0 ? 0 : x.numel() / n;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  auto xv = x.values();
  std::vector<float> out(rows.size() * static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(xv.data() + rows[i] * width, width, out.data() + i * width);
  }
  const bool rec = should_record({&x});
  Tensor y(out_shape, std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, rows, width]() {
      auto g = y.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::int64_t j = 0; j < width; ++j) dx[rows[i] * width + j] += g[i * width + j];
    });
  }
  return y;
}

Tensor repeat_rows(const Tensor& x, std::int64_t times) {
  require_defined(x, "repeat_rows");
  if (times < 1) throw ContractError("repeat_rows: times must be >= 1");
  std::vector<std::int64_t> rows;
  rows.reserve(static_cast<std::size_t>(x.dim(0) * times));
  for (std::int64_t r = 0; r < x.dim(0); ++r)
    for (std::int64_t k = 0; k < times; ++k) rows.push_back(r);
  return gather_rows(x, rows);
}

Tensor dropout(const Tensor& x, float rate, bool training, std::mt19937_64& rng) {
  require_defined(x, "dropout");
  if (!training || rate <= 0.0f) return x;
  if (rate >= 1.0f) throw ContractError("dropout: rate must be < 1");
  const float keep_scale = 1.0f / (1.0f - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  auto xv = x.values();
  std::vector<float> mask(xv.size());
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = keep(rng) ? keep_scale : 0.0f;
    out[i] = xv[i] * mask[i];
  }
  const bool rec = should_record({&x});
  Tensor y(x.shape(), std::move(out), rec);
  if (rec) {
    Tape::active().record(y, [x, y, mask = std::move(mask)]() {
      auto g = y.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
    });
  }
  return y;
}

}  // namespace hepa
