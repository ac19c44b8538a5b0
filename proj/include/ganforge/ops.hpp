#pragma once

// Differentiable tensor ops. Each backward rule is expressed with ops from
// this file (or conv.hpp), which keeps the op set closed under
// differentiation.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ganforge/autograd.hpp"

namespace ganforge {

template <class T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

namespace detail {

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw Error(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  const T* src = a.ptr();
  T* dst = out.ptr();
  for (std::int64_t i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class T, class F>
Tensor<T> zip(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f) {
  require_same_shape(op, a.shape(), b.shape());
  Tensor<T> out(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* dst = out.ptr();
  for (std::int64_t i = 0; i < a.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

/// Pads a rank<=4 shape on the left to rank 4.
inline std::array<std::int64_t, 4> as4(const Shape& s) {
  if (s.size() > 4) throw Error("rank > 4 not supported: " + to_string(s));
  std::array<std::int64_t, 4> out{1, 1, 1, 1};
  std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) out[off + i] = s[i];
  return out;
}

/// Sums `in` into `out` where `out` has extent 1 on reduced axes.
template <class T>
void reduce_into(const Tensor<T>& in, Tensor<T>& out) {
  auto si = as4(in.shape());
  auto so = as4(out.shape());
  std::array<std::int64_t, 4> stride{};
  std::int64_t acc = 1;
  for (int d = 3; d >= 0; --d) {
    stride[d] = so[d] == 1 ? 0 : acc;
    acc *= so[d];
  }
  const T* src = in.ptr();
  T* dst = out.ptr();
  std::int64_t i = 0;
  for (std::int64_t a = 0; a < si[0]; ++a)
    for (std::int64_t b = 0; b < si[1]; ++b)
      for (std::int64_t c = 0; c < si[2]; ++c) {
        T* row = dst + a * stride[0] + b * stride[1] + c * stride[2];
        if (stride[3] == 0) {
          T s = 0;
          for (std::int64_t d = 0; d < si[3]; ++d) s += src[i++];
          *row += s;
        } else {
          for (std::int64_t d = 0; d < si[3]; ++d) row[d] += src[i++];
        }
      }
}

template <class T>
Tensor<T> broadcast_raw(const Tensor<T>& in, const Shape& shape) {
  auto si = as4(in.shape());
  auto so = as4(shape);
  std::array<std::int64_t, 4> stride{};
  std::int64_t acc = 1;
  for (int d = 3; d >= 0; --d) {
    stride[d] = si[d] == 1 ? 0 : acc;
    acc *= si[d];
  }
  Tensor<T> out(shape);
  const T* src = in.ptr();
  T* dst = out.ptr();
  std::int64_t i = 0;
  for (std::int64_t a = 0; a < so[0]; ++a)
    for (std::int64_t b = 0; b < so[1]; ++b)
      for (std::int64_t c = 0; c < so[2]; ++c) {
        const T* row = src + a * stride[0] + b * stride[1] + c * stride[2];
        for (std::int64_t d = 0; d < so[3]; ++d) dst[i++] = row[d * stride[3]];
      }
  return out;
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("add", detail::zip("add", a.value(), b.value(), [](T x, T y) { return x + y; }),
                    {a, b}, [](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{g, g};
                    });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return make_op<T>("neg", detail::map(a.value(), [](T x) { return -x; }), {a},
                    [](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{neg(g)};
                    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("sub", detail::zip("sub", a.value(), b.value(), [](T x, T y) { return x - y; }),
                    {a, b}, [](const Var<T>&, const Var<T>& g, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{g, needs[1] ? neg(g) : Var<T>()};
                    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("mul", detail::zip("mul", a.value(), b.value(), [](T x, T y) { return x * y; }),
                    {a, b}, [a, b](const Var<T>&, const Var<T>& g, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? mul(g, b) : Var<T>(),
                                                 needs[1] ? mul(g, a) : Var<T>()};
                    });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("div", detail::zip("div", a.value(), b.value(), [](T x, T y) { return x / y; }),
                    {a, b}, [b](const Var<T>& self, const Var<T>& g, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? div(g, b) : Var<T>(),
                                                 needs[1] ? neg(div(mul(g, self), b)) : Var<T>()};
                    });
}

/// Division that yields 0 wherever the denominator is exactly 0.
template <class T>
Var<T> safe_div(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(
      "safe_div",
      detail::zip("safe_div", a.value(), b.value(), [](T x, T y) { return y == T{0} ? T{0} : x / y; }),
      {a, b}, [b](const Var<T>& self, const Var<T>& g, const std::vector<bool>& needs) {
        return std::vector<Var<T>>{needs[0] ? safe_div(g, b) : Var<T>(),
                                   needs[1] ? neg(safe_div(mul(g, self), b)) : Var<T>()};
      });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  return make_op<T>("scale", detail::map(a.value(), [c](T x) { return x * c; }), {a},
                    [c](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{scale(g, c)};
                    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  return make_op<T>("add_scalar", detail::map(a.value(), [c](T x) { return x + c; }), {a},
                    [](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{g};
                    });
}

/// Elementwise product with a constant (non-differentiable) tensor, used for
/// masks of piecewise-linear ops.
template <class T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& m) {
  return make_op<T>("mul_const", detail::zip("mul_const", a.value(), m, [](T x, T y) { return x * y; }),
                    {a}, [m](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul_const(g, m)};
                    });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return make_op<T>("square", detail::map(a.value(), [](T x) { return x * x; }), {a},
                    [a](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul(g, scale(a, T{2}))};
                    });
}

/// Square root whose derivative at exactly 0 is taken as 0.
template <class T>
Var<T> sqrt(const Var<T>& a) {
  return make_op<T>("sqrt", detail::map(a.value(), [](T x) { return std::sqrt(x); }), {a},
                    [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{safe_div(scale(g, T{0.5}), self)};
                    });
}

template <class T>
Var<T> log(const Var<T>& a) {
  return make_op<T>("log", detail::map(a.value(), [](T x) { return std::log(x); }), {a},
                    [a](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{div(g, a)};
                    });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  return make_op<T>("tanh", detail::map(a.value(), [](T x) { return std::tanh(x); }), {a},
                    [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul(g, add_scalar(neg(square(self)), T{1}))};
                    });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return make_op<T>(
      "sigmoid", detail::map(a.value(), [](T x) { return T{1} / (T{1} + std::exp(-x)); }), {a},
      [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{mul(g, mul(self, add_scalar(neg(self), T{1})))};
      });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> mask = detail::map(a.value(), [slope](T x) { return x > T{0} ? T{1} : slope; });
  return mul_const(a, mask);
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return leaky_relu(a, T{0});
}

/// Clamp to [lo, hi]; the gradient is zero where the clamp is active.
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> mask = detail::map(a.value(), [lo, hi](T x) { return x < lo || x > hi ? T{0} : T{1}; });
  return make_op<T>("clamp", detail::map(a.value(), [lo, hi](T x) { return std::clamp(x, lo, hi); }),
                    {a}, [mask](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul_const(g, mask)};
                    });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Shape original = a.shape();
  return make_op<T>("reshape", a.value().reshaped(std::move(shape)), {a},
                    [original](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{reshape(g, original)};
                    });
}

template <class T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape);

/// Sums over `axes`, keeping them with extent 1.
template <class T>
Var<T> reduce_sum(const Var<T>& a, const std::vector<int>& axes) {
  Shape out_shape = a.shape();
  for (int ax : axes) {
    if (ax < 0 || ax >= a.value().rank()) throw Error("reduce_sum: bad axis for " + to_string(a.shape()));
    out_shape[static_cast<std::size_t>(ax)] = 1;
  }
  Tensor<T> out(out_shape);
  detail::reduce_into(a.value(), out);
  Shape in_shape = a.shape();
  return make_op<T>("reduce_sum", std::move(out), {a},
                    [in_shape](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{broadcast_to(g, in_shape)};
                    });
}

/// Repeats extent-1 axes of `a` up to `shape` (same rank required).
template <class T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape) {
  const Shape& in = a.shape();
  if (in.size() != shape.size()) {
    throw Error("broadcast_to: rank mismatch " + to_string(in) + " -> " + to_string(shape));
  }
  std::vector<int> axes;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == shape[i]) continue;
    if (in[i] != 1) throw Error("broadcast_to: cannot broadcast " + to_string(in) + " -> " + to_string(shape));
    axes.push_back(static_cast<int>(i));
  }
  if (axes.empty()) return a;
  return make_op<T>("broadcast", detail::broadcast_raw(a.value(), shape), {a},
                    [axes](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{reduce_sum(g, axes)};
                    });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  std::vector<int> axes(static_cast<std::size_t>(a.value().rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return reshape(axes.empty() ? a : reduce_sum(a, axes), Shape{});
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

/// Mean over `axes`, keeping them with extent 1.
template <class T>
Var<T> reduce_mean(const Var<T>& a, const std::vector<int>& axes) {
  std::int64_t count = 1;
  for (int ax : axes) count *= a.value().dim(ax);
  return scale(reduce_sum(a, axes), T{1} / static_cast<T>(count));
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
Tensor<T> matmul_raw(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw Error("matmul needs rank-2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  std::int64_t m = ta ? a.dim(1) : a.dim(0);
  std::int64_t ka = ta ? a.dim(0) : a.dim(1);
  std::int64_t kb = tb ? b.dim(1) : b.dim(0);
  std::int64_t n = tb ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw Error("matmul inner dimension mismatch " + to_string(a.shape()) + (ta ? "^T" : "") + " x " +
                to_string(b.shape()) + (tb ? "^T" : ""));
  }
  Tensor<T> out(Shape{m, n});
  ConstMatMap<T> am(a.ptr(), a.dim(0), a.dim(1));
  ConstMatMap<T> bm(b.ptr(), b.dim(0), b.dim(1));
  MatMap<T> om(out.ptr(), m, n);
  if (!ta && !tb) om.noalias() = am * bm;
  if (!ta && tb) om.noalias() = am * bm.transpose();
  if (ta && !tb) om.noalias() = am.transpose() * bm;
  if (ta && tb) om.noalias() = am.transpose() * bm.transpose();
  return out;
}

}  // namespace detail

/// op(a) * op(b) where op transposes when the flag is set.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  return make_op<T>("matmul", detail::matmul_raw(a.value(), b.value(), ta, tb), {a, b},
                    [a, b, ta, tb](const Var<T>&, const Var<T>& g, const std::vector<bool>& needs) {
                      Var<T> ga, gb;
                      if (!ta && !tb) {
                        if (needs[0]) ga = matmul(g, b, false, true);
                        if (needs[1]) gb = matmul(a, g, true, false);
                      } else if (!ta && tb) {
                        if (needs[0]) ga = matmul(g, b, false, false);
                        if (needs[1]) gb = matmul(g, a, true, false);
                      } else if (ta && !tb) {
                        if (needs[0]) ga = matmul(b, g, false, true);
                        if (needs[1]) gb = matmul(a, g, false, false);
                      } else {
                        if (needs[0]) ga = matmul(b, g, true, true);
                        if (needs[1]) gb = matmul(g, a, true, true);
                      }
                      return std::vector<Var<T>>{ga, gb};
                    });
}

namespace detail {

/// Views a rank>=2 shape as (outer, channels, inner) around axis 1.
inline std::array<std::int64_t, 3> channel_view(const Shape& s) {
  if (s.size() < 2) throw Error("channel op needs rank >= 2, got " + to_string(s));
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

}  // namespace detail

template <class T>
Var<T> slice_channels(const Var<T>& a, std::int64_t start, std::int64_t count);

/// Writes `a` into channels [start, start + C_a) of a zero tensor with
/// `total` channels.
template <class T>
Var<T> embed_channels(const Var<T>& a, std::int64_t start, std::int64_t total) {
  auto [n, c, inner] = detail::channel_view(a.shape());
  if (start < 0 || start + c > total) throw Error("embed_channels: range out of bounds");
  Shape shape = a.shape();
  shape[1] = total;
  Tensor<T> out(shape);
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.value().ptr() + i * c * inner, c * inner, out.ptr() + (i * total + start) * inner);
  }
  return make_op<T>("embed_channels", std::move(out), {a},
                    [start, c = c](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{slice_channels(g, start, c)};
                    });
}

template <class T>
Var<T> slice_channels(const Var<T>& a, std::int64_t start, std::int64_t count) {
  auto [n, c, inner] = detail::channel_view(a.shape());
  if (start < 0 || count < 0 || start + count > c) {
    throw Error("slice_channels: range out of bounds for " + to_string(a.shape()));
  }
  Shape shape = a.shape();
  shape[1] = count;
  Tensor<T> out(shape);
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.value().ptr() + (i * c + start) * inner, count * inner, out.ptr() + i * count * inner);
  }
  return make_op<T>("slice_channels", std::move(out), {a},
                    [start, c = c](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{embed_channels(g, start, c)};
                    });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  auto [na, ca, ia] = detail::channel_view(a.shape());
  auto [nb, cb, ib] = detail::channel_view(b.shape());
  if (na != nb || ia != ib) {
    throw Error("concat_channels: incompatible " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[1] = ca + cb;
  Tensor<T> out(shape);
  for (std::int64_t i = 0; i < na; ++i) {
    std::copy_n(a.value().ptr() + i * ca * ia, ca * ia, out.ptr() + i * (ca + cb) * ia);
    std::copy_n(b.value().ptr() + i * cb * ia, cb * ia, out.ptr() + (i * (ca + cb) + ca) * ia);
  }
  return make_op<T>("concat_channels", std::move(out), {a, b},
                    [ca = ca, cb = cb](const Var<T>&, const Var<T>& g, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? slice_channels(g, 0, ca) : Var<T>(),
                                                 needs[1] ? slice_channels(g, ca, cb) : Var<T>()};
                    });
}

}  // namespace ganforge
