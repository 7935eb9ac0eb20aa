#pragma once

// Finite-difference checks of every differentiable op against a float64
// re-implementation of its forward pass. Shared by the unit and acceptance
// suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hepa/tensor.hpp"

namespace gradcheck {

using Vec = std::vector<double>;
using Shadow = std::function<Vec(const std::vector<Vec>&)>;
using Op = std::function<hepa::Tensor(const std::vector<hepa::Tensor>&)>;

struct Result {
  std::string name;
  double max_rel_err = 0.0;
};

inline double rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
}

inline hepa::Tensor random_tensor(hepa::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<float> u(static_cast<float>(lo), static_cast<float>(hi));
  hepa::Tensor t(std::move(shape), true);
  for (float& v : t.values()) v = u(rng);
  return t;
}

// Loss = sum(op(inputs) * r) for a fixed random r; compares backward() with
// central differences of the float64 shadow, step h.
inline Result check(const std::string& name, std::vector<hepa::Tensor> inputs, const Op& op, const Shadow& shadow,
                    std::mt19937_64& rng, double h = 1e-3) {
  for (auto& t : inputs) t.zero_grad();
  hepa::Tensor out = op(inputs);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  hepa::Tensor r(out.shape());
  for (float& v : r.values()) v = u(rng);
  hepa::backward(hepa::sum(hepa::mul(out, r)));

  std::vector<Vec> base;
  for (const auto& t : inputs) base.emplace_back(t.values().begin(), t.values().end());
  auto weighted = [&](const std::vector<Vec>& xs) {
    Vec y = shadow(xs);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r.values()[i];
    return acc;
  };
  Result res{name, 0.0};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    auto g = inputs[k].grad();
    for (std::size_t j = 0; j < base[k].size(); ++j) {
      auto xs = base;
      xs[k][j] += h;
      const double fp = weighted(xs);
      xs[k][j] -= 2 * h;
      const double fm = weighted(xs);
      const double numeric = (fp - fm) / (2 * h);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(g[j], numeric));
    }
  }
  return res;
}

inline Vec map1(const Vec& x, const std::function<double(double)>& f) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

inline Vec shadow_matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

inline std::vector<Result> check_all_ops(std::uint64_t seed) {
  using namespace hepa;
  std::mt19937_64 rng(seed);
  std::vector<Result> out;
  auto T = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(s), rng, lo, hi); };

  out.push_back(check("add_broadcast", {T({3, 4}), T({4})}, [](auto& v) { return add(v[0], v[1]); },
                      [](auto& x) {
                        Vec y(12);
                        for (int i = 0; i < 12; ++i) y[i] = x[0][i] + x[1][i % 4];
                        return y;
                      },
                      rng));
  out.push_back(check("sub", {T({2, 5}), T({2, 5})}, [](auto& v) { return sub(v[0], v[1]); },
                      [](auto& x) {
                        Vec y(10);
                        for (int i = 0; i < 10; ++i) y[i] = x[0][i] - x[1][i];
                        return y;
                      },
                      rng));
  out.push_back(check("mul_broadcast", {T({2, 3, 4}), T({3, 4})}, [](auto& v) { return mul(v[0], v[1]); },
                      [](auto& x) {
                        Vec y(24);
                        for (int i = 0; i < 24; ++i) y[i] = x[0][i] * x[1][i % 12];
                        return y;
                      },
                      rng));
  out.push_back(check("div", {T({3, 3}), T({3, 3}, 0.5, 2.0)}, [](auto& v) { return div(v[0], v[1]); },
                      [](auto& x) {
                        Vec y(9);
                        for (int i = 0; i < 9; ++i) y[i] = x[0][i] / x[1][i];
                        return y;
                      },
                      rng));
  out.push_back(check("scale", {T({7})}, [](auto& v) { return scale(v[0], -2.5f); },
                      [](auto& x) { return map1(x[0], [](double a) { return -2.5 * a; }); }, rng));
  out.push_back(check("add_scalar", {T({7})}, [](auto& v) { return add_scalar(v[0], 0.75f); },
                      [](auto& x) { return map1(x[0], [](double a) { return a + 0.75; }); }, rng));
  out.push_back(check("matmul", {T({3, 4}), T({4, 5})}, [](auto& v) { return matmul(v[0], v[1]); },
                      [](auto& x) { return shadow_matmul(x[0], x[1], 3, 4, 5); }, rng));
  out.push_back(check("bmm", {T({2, 3, 4}), T({2, 4, 2})}, [](auto& v) { return bmm(v[0], v[1]); },
                      [](auto& x) {
                        Vec y;
                        for (int g = 0; g < 2; ++g) {
                          Vec a(x[0].begin() + g * 12, x[0].begin() + (g + 1) * 12);
                          Vec b(x[1].begin() + g * 8, x[1].begin() + (g + 1) * 8);
                          Vec c = shadow_matmul(a, b, 3, 4, 2);
                          y.insert(y.end(), c.begin(), c.end());
                        }
                        return y;
                      },
                      rng));
  out.push_back(check("bmm_transposed", {T({2, 3, 4}), T({2, 5, 4})}, [](auto& v) { return bmm(v[0], v[1], true); },
                      [](auto& x) {
                        Vec y(2 * 3 * 5, 0.0);
                        for (int g = 0; g < 2; ++g)
                          for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 5; ++j)
                              for (int p = 0; p < 4; ++p)
                                y[(g * 3 + i) * 5 + j] += x[0][(g * 3 + i) * 4 + p] * x[1][(g * 5 + j) * 4 + p];
                        return y;
                      },
                      rng));
  out.push_back(check("linear", {T({2, 3, 4}), T({4, 3}), T({3})},
                      [](auto& v) { return linear(v[0], v[1], v[2]); },
                      [](auto& x) {
                        Vec y = shadow_matmul(x[0], x[1], 6, 4, 3);
                        for (int i = 0; i < 18; ++i) y[i] += x[2][i % 3];
                        return y;
                      },
                      rng));
  out.push_back(check("layernorm", {T({4, 8}, -2.0, 2.0), T({8}, 0.5, 1.5), T({8})},
                      [](auto& v) { return layernorm(v[0], v[1], v[2], 1e-5f); },
                      [](auto& x) {
                        Vec y(32);
                        for (int r = 0; r < 4; ++r) {
                          double mu = 0, var = 0;
                          for (int j = 0; j < 8; ++j) mu += x[0][r * 8 + j] / 8.0;
                          for (int j = 0; j < 8; ++j) var += std::pow(x[0][r * 8 + j] - mu, 2) / 8.0;
                          for (int j = 0; j < 8; ++j)
                            y[r * 8 + j] = (x[0][r * 8 + j] - mu) / std::sqrt(var + 1e-5) * x[1][j] + x[2][j];
                        }
                        return y;
                      },
                      rng));
  out.push_back(check("sigmoid", {T({9}, -4.0, 4.0)}, [](auto& v) { return sigmoid(v[0]); },
                      [](auto& x) { return map1(x[0], [](double a) { return 1.0 / (1.0 + std::exp(-a)); }); }, rng));
  out.push_back(check("softplus", {T({9}, -4.0, 4.0)}, [](auto& v) { return softplus(v[0]); },
                      [](auto& x) { return map1(x[0], [](double a) { return std::log1p(std::exp(a)); }); }, rng));
  out.push_back(check("gelu", {T({9}, -3.0, 3.0)}, [](auto& v) { return gelu(v[0]); },
                      [](auto& x) {
                        return map1(x[0], [](double a) {
                          return 0.5 * a * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (a + 0.044715 * a * a * a)));
                        });
                      },
                      rng));
  out.push_back(check("exp", {T({9}, -2.0, 2.0)}, [](auto& v) { return exp(v[0]); },
                      [](auto& x) { return map1(x[0], [](double a) { return std::exp(a); }); }, rng));
  out.push_back(check("log", {T({9}, 0.2, 3.0)}, [](auto& v) { return log(v[0]); },
                      [](auto& x) { return map1(x[0], [](double a) { return std::log(a); }); }, rng));
  out.push_back(check("abs", {T({9}, 0.1, 1.0)}, [](auto& v) { return abs(scale(v[0], -1.0f)); },
                      [](auto& x) { return map1(x[0], [](double a) { return std::fabs(-a); }); }, rng));
  out.push_back(check("square", {T({9})}, [](auto& v) { return square(v[0]); },
                      [](auto& x) { return map1(x[0], [](double a) { return a * a; }); }, rng));
  out.push_back(check("pow", {T({9}, 0.3, 2.0)}, [](auto& v) { return pow(v[0], 3.0f); },
                      [](auto& x) { return map1(x[0], [](double a) { return a * a * a; }); }, rng));
  out.push_back(check("clamp", {hepa::Tensor({4}, {-0.9f, -0.2f, 0.3f, 0.95f}, true)},
                      [](auto& v) { return clamp(v[0], -0.5f, 0.5f); },
                      [](auto& x) { return map1(x[0], [](double a) { return std::clamp(a, -0.5, 0.5); }); }, rng));
  out.push_back(check("l2_normalize", {T({3, 5})}, [](auto& v) { return l2_normalize(v[0]); },
                      [](auto& x) {
                        Vec y(15);
                        for (int r = 0; r < 3; ++r) {
                          double ss = 1e-12;
                          for (int j = 0; j < 5; ++j) ss += x[0][r * 5 + j] * x[0][r * 5 + j];
                          for (int j = 0; j < 5; ++j) y[r * 5 + j] = x[0][r * 5 + j] / std::sqrt(ss);
                        }
                        return y;
                      },
                      rng));
  {
    hepa::Tensor mask(Shape{2, 4}, {0, 0, -1e9f, 0, 0, 0, 0, -1e9f});
    out.push_back(check("softmax_masked", {T({2, 4}, -2.0, 2.0)}, [mask](auto& v) { return softmax(v[0], mask); },
                        [mask](auto& x) {
                          Vec y(8);
                          for (int r = 0; r < 2; ++r) {
                            double total = 0;
                            for (int j = 0; j < 4; ++j) total += std::exp(x[0][r * 4 + j] + mask.values()[r * 4 + j]);
                            for (int j = 0; j < 4; ++j)
                              y[r * 4 + j] = std::exp(x[0][r * 4 + j] + mask.values()[r * 4 + j]) / total;
                          }
                          return y;
                        },
                        rng));
  }
  out.push_back(check("cumsum_last", {T({2, 6})}, [](auto& v) { return cumsum_last(v[0]); },
                      [](auto& x) {
                        Vec y(12);
                        for (int r = 0; r < 2; ++r) {
                          double acc = 0;
                          for (int j = 0; j < 6; ++j) y[r * 6 + j] = acc += x[0][r * 6 + j];
                        }
                        return y;
                      },
                      rng));
  out.push_back(check("sum", {T({3, 3})}, [](auto& v) { return sum(v[0]); },
                      [](auto& x) {
                        double s = 0;
                        for (double a : x[0]) s += a;
                        return Vec{s};
                      },
                      rng));
  out.push_back(check("mean", {T({3, 3})}, [](auto& v) { return mean(v[0]); },
                      [](auto& x) {
                        double s = 0;
                        for (double a : x[0]) s += a;
                        return Vec{s / 9.0};
                      },
                      rng));
  out.push_back(check("column_mean", {T({4, 3})}, [](auto& v) { return column_mean(v[0]); },
                      [](auto& x) {
                        Vec y(3, 0.0);
                        for (int i = 0; i < 12; ++i) y[i % 3] += x[0][i] / 4.0;
                        return y;
                      },
                      rng));
  out.push_back(check("reshape", {T({2, 6})}, [](auto& v) { return reshape(v[0], {3, 4}); },
                      [](auto& x) { return x[0]; }, rng));
  out.push_back(check("permute", {T({2, 3, 4})}, [](auto& v) { return permute(v[0], {2, 0, 1}); },
                      [](auto& x) {
                        Vec y(24);
                        for (int a = 0; a < 2; ++a)
                          for (int b = 0; b < 3; ++b)
                            for (int c = 0; c < 4; ++c) y[(c * 2 + a) * 3 + b] = x[0][(a * 3 + b) * 4 + c];
                        return y;
                      },
                      rng));
  out.push_back(check("concat_last", {T({2, 2}), T({2, 3})}, [](auto& v) { return concat_last({v[0], v[1]}); },
                      [](auto& x) {
                        Vec y;
                        for (int r = 0; r < 2; ++r) {
                          y.insert(y.end(), x[0].begin() + r * 2, x[0].begin() + r * 2 + 2);
                          y.insert(y.end(), x[1].begin() + r * 3, x[1].begin() + r * 3 + 3);
                        }
                        return y;
                      },
                      rng));
  out.push_back(check("concat_rows", {T({1, 3}), T({2, 3})}, [](auto& v) { return concat_rows({v[0], v[1]}); },
                      [](auto& x) {
                        Vec y = x[0];
                        y.insert(y.end(), x[1].begin(), x[1].end());
                        return y;
                      },
                      rng));
  out.push_back(check("select", {T({2, 3, 4})}, [](auto& v) { return select(v[0], 1, 2); },
                      [](auto& x) {
                        Vec y(8);
                        for (int a = 0; a < 2; ++a)
                          for (int c = 0; c < 4; ++c) y[a * 4 + c] = x[0][(a * 3 + 2) * 4 + c];
                        return y;
                      },
                      rng));
  out.push_back(check("gather_rows", {T({3, 2})}, [](auto& v) { return gather_rows(v[0], {2, 0, 2}); },
                      [](auto& x) {
                        return Vec{x[0][4], x[0][5], x[0][0], x[0][1], x[0][4], x[0][5]};
                      },
                      rng));
  out.push_back(check("repeat_rows", {T({2, 2})}, [](auto& v) { return repeat_rows(v[0], 2); },
                      [](auto& x) {
                        return Vec{x[0][0], x[0][1], x[0][0], x[0][1], x[0][2], x[0][3], x[0][2], x[0][3]};
                      },
                      rng));
  {
    // The keep mask is recovered from one forward pass and frozen in the shadow.
    auto drop_rng = std::make_shared<std::mt19937_64>(seed + 17);
    hepa::Tensor x = T({12}, 0.5, 1.0);
    std::mt19937_64 probe(seed + 17);
    hepa::Tensor y;
    {
      hepa::NoGradGuard ng;
      y = dropout(x, 0.25f, true, probe);
    }
    Vec mask(12);
    for (int i = 0; i < 12; ++i) mask[i] = y.values()[i] / x.values()[i];
    out.push_back(check("dropout", {x}, [drop_rng](auto& v) { return dropout(v[0], 0.25f, true, *drop_rng); },
                        [mask](auto& xs) {
                          Vec o(12);
                          for (int i = 0; i < 12; ++i) o[i] = xs[0][i] * mask[i];
                          return o;
                        },
                        rng));
  }
  return out;
}

}  // namespace gradcheck
