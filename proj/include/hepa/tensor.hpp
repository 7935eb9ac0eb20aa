#pragma once

// Dense float32 tensors with define-by-run reverse-mode differentiation.
//
// Every differentiable operation whose inputs require gradients appends a
// closure to the calling thread's Tape. backward() replays the tape in
// reverse recording order, which is a valid topological order because an
// op can only consume tensors that already exist.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hepa {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
// 64-byte aligned storage: vectorized kernels pick their code path from the
// buffer alignment, so unaligned heaps would make rounding address-dependent.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};
using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

struct TensorImpl {
  Shape shape;
  FloatBuffer values;
  FloatBuffer grad;  // empty until first touched
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }

  std::span<float> values() { return impl_->values; }
  std::span<const float> values() const { return impl_->values; }
  float item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  // Allocates a zero gradient on first access.
  std::span<float> grad() const;
  void zero_grad();

  // Same values, no gradient tracking, independent storage.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& active();

  void record(const Tensor& output, BackwardFn fn);
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1, replays the tape in reverse and clears it.
  void backward(const Tensor& loss);

 private:
  struct Entry {
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

bool grad_enabled();

// Disables recording for the guard's lifetime (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops accept identical shapes or a right-hand
// operand whose shape is a suffix of the left-hand shape (broadcast over the
// leading axes).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product over the leading axis: [G,m,k] x [G,k,n] (or [G,n,k] when
// transpose_b) -> [G,m,n].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor pow(const Tensor& x, float exponent);
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor l2_normalize(const Tensor& x, float eps = 1e-12f);
// Softmax over the last axis. `mask` (same shape, constant) is added to the
// logits first; use a large negative value to exclude an entry.
Tensor softmax(const Tensor& x, const Tensor& mask = Tensor());
Tensor cumsum_last(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over every axis except the last: [..., C] -> [C].
Tensor column_mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
// Removes `axis` by picking one index along it.
Tensor select(const Tensor& x, int axis, std::int64_t index);
// Rows of a [N, C...] tensor in the given order (indices may repeat).
Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows);
// Each row repeated `times` times consecutively: [N, C] -> [N*times, C].
Tensor repeat_rows(const Tensor& x, std::int64_t times);

// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, float rate, bool training, std::mt19937_64& rng);

}  // namespace hepa
