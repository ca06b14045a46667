// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cpmoe/errors.hpp"

namespace cpmoe::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ConfigError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                    to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw ConfigError(std::string(op) + ": shape " + to_string(a) + " " + why);
}

template <typename T>
void require_finite(const char* op, std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite input value");
    }
  }
}

template <typename T>
std::size_t last_dim(const Tensor<T>& x) {
  return x.shape().back();
}

template <typename T>
bool wants_grad(const NodePtr<T>& p) {
  return p->requires_grad;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  if (b.rank() == 2) {
    const std::size_t k = a.shape().back();
    if (b.dim(0) != k) shape_error("matmul", a.shape(), b.shape());
    const std::size_t m = a.numel() / k;
    const std::size_t n = b.dim(1);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    std::vector<T> out(m * n);
    MutMap<T>(out.data(), m, n).noalias() =
        ConstMap<T>(a.data().data(), m, k) * ConstMap<T>(b.data().data(), k, n);
    return make_node<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                        [m, k, n](Node<T>& self) {
                          ConstMap<T> g(self.grad.data(), m, n);
                          auto& pa = self.parents[0];
                          auto& pb = self.parents[1];
                          if (wants_grad(pa)) {
                            MutMap<T>(pa->grad_buffer().data(), m, k).noalias() +=
                                g * ConstMap<T>(pb->value.data(), k, n).transpose();
                          }
                          if (wants_grad(pb)) {
                            MutMap<T>(pb->grad_buffer().data(), k, n).noalias() +=
                                ConstMap<T>(pa->value.data(), m, k).transpose() * g;
                          }
                        });
  }
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap<T>(out.data() + i * m * n, m, n).noalias() =
        ConstMap<T>(a.data().data() + i * m * k, m, k) *
        ConstMap<T>(b.data().data() + i * k * n, k, n);
  }
  return make_node<T>(
      "matmul", Shape{batch, m, n}, std::move(out), {a, b}, [batch, m, k, n](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMap<T> g(self.grad.data() + i * m * n, m, n);
          if (wants_grad(pa)) {
            MutMap<T>(pa->grad_buffer().data() + i * m * k, m, k).noalias() +=
                g * ConstMap<T>(pb->value.data() + i * k * n, k, n).transpose();
          }
          if (wants_grad(pb)) {
            MutMap<T>(pb->grad_buffer().data() + i * k * n, k, n).noalias() +=
                ConstMap<T>(pa->value.data() + i * m * k, m, k).transpose() * g;
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_node<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_node<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (wants_grad(self.parents[0])) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self.parents[1])) {
      auto g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_node<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (wants_grad(pb)) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return make_node<T>("scale", x.shape(), std::move(out), {x}, [factor](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require_finite<T>("softmax", x.data());
  const std::size_t cols = last_dim(x);
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_node<T>("softmax", x.shape(), std::move(out), {x}, [rows, cols](Node<T>& self) {
    auto gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out[i] = v / (T(1) + std::exp(-v));
  }
  return make_node<T>("silu", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p->value[i];
      const T s = T(1) / (T(1) + std::exp(-v));
      g[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    if (!std::isfinite(v) || v <= T(0)) {
      throw NumericError("log: input " + std::to_string(static_cast<double>(v)) +
                         " outside (0, inf)");
    }
    out[i] = std::log(v);
  }
  return make_node<T>("log", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p->value[i];
  });
}

template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
  const std::size_t cols = last_dim(x);
  if (weight.rank() != 1 || weight.dim(0) != cols) {
    shape_error("rmsnorm", x.shape(), weight.shape());
  }
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * cols;
    T ms = 0;
    for (std::size_t c = 0; c < cols; ++c) ms += in[c] * in[c];
    ms /= static_cast<T>(cols);
    inv[r] = T(1) / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = in[c] * inv[r] * weight.data()[c];
    }
  }
  return make_node<T>(
      "rmsnorm", x.shape(), std::move(out), {x, weight},
      [rows, cols, inv = std::move(inv)](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        const T* w = pw->value.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* in = px->value.data() + r * cols;
          const T* g = self.grad.data() + r * cols;
          if (wants_grad(px)) {
            T dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[c] * w[c] * in[c];
            const T coef = inv[r] * inv[r] * inv[r] * dot / static_cast<T>(cols);
            T* gx = px->grad_buffer().data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) gx[c] += inv[r] * g[c] * w[c] - coef * in[c];
          }
          if (wants_grad(pw)) {
            T* gw = pw->grad_buffer().data();
            for (std::size_t c = 0; c < cols; ++c) gw[c] += g[c] * in[c] * inv[r];
          }
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) shape_error("embedding", table.shape(), "is not a [vocab, d] table");
  if (ids.empty()) throw ConfigError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  std::vector<T> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw ContractError("embedding: token id " + std::to_string(rows[i]) +
                          " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(rows[i]) * d, d,
                out.data() + i * d);
  }
  const std::size_t n = rows.size();
  return make_node<T>("embedding", Shape{n, d}, std::move(out), {table},
                      [d, rows = std::move(rows)](Node<T>& self) {
                        T* g = self.parents[0]->grad_buffer().data();
                        for (std::size_t i = 0; i < rows.size(); ++i) {
                          T* dst = g + static_cast<std::size_t>(rows[i]) * d;
                          const T* src = self.grad.data() + i * d;
                          for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                        }
                      });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank()) shape_error("slice", x.shape(), "has no axis " + std::to_string(axis));
  if (length == 0 || start + length > x.dim(axis)) {
    shape_error("slice", x.shape(),
                "cannot take [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") on axis " + std::to_string(axis));
  }
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.data().data() + (o * sp.extent + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  return make_node<T>("slice", std::move(out_shape), std::move(out), {x},
                      [sp, start, length](Node<T>& self) {
                        T* g = self.parents[0]->grad_buffer().data();
                        for (std::size_t o = 0; o < sp.outer; ++o) {
                          T* dst = g + (o * sp.extent + start) * sp.inner;
                          const T* src = self.grad.data() + o * length * sp.inner;
                          for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
                        }
                      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ConfigError("concat: no inputs");
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) shape_error("concat", first, "has no axis " + std::to_string(axis));
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) shape_error("concat", first, s);
    extents.push_back(s[axis]);
    total += s[axis];
  }
  AxisSplit sp = split_at(first, axis);
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(sp.outer * total * sp.inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(xs[k].data().data() + o * extents[k] * sp.inner, extents[k] * sp.inner,
                  out.data() + (o * total + offset) * sp.inner);
    }
    offset += extents[k];
  }
  return make_node<T>("concat", std::move(out_shape), std::move(out), xs,
                      [sp, total, extents = std::move(extents)](Node<T>& self) {
                        std::size_t off = 0;
                        for (std::size_t k = 0; k < extents.size(); ++k) {
                          auto& p = self.parents[k];
                          if (wants_grad(p)) {
                            T* g = p->grad_buffer().data();
                            for (std::size_t o = 0; o < sp.outer; ++o) {
                              const T* src = self.grad.data() + (o * total + off) * sp.inner;
                              T* dst = g + o * extents[k] * sp.inner;
                              for (std::size_t i = 0; i < extents[k] * sp.inner; ++i) {
                                dst[i] += src[i];
                              }
                            }
                          }
                          off += extents[k];
                        }
                      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) shape_error("transpose", x.shape(), "has rank below 2");
  const std::size_t m = x.dim(x.rank() - 2), n = x.dim(x.rank() - 1);
  const std::size_t batch = x.numel() / (m * n);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        out[b * m * n + j * m + i] = x.data()[b * m * n + i * n + j];
      }
    }
  }
  return make_node<T>("transpose", std::move(out_shape), std::move(out), {x},
                      [batch, m, n](Node<T>& self) {
                        T* g = self.parents[0]->grad_buffer().data();
                        for (std::size_t b = 0; b < batch; ++b) {
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                              g[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
                            }
                          }
                        }
                      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_node<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_node<T>("sum", Shape{1}, std::vector<T>{total}, {x}, [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  const T n = static_cast<T>(x.numel());
  return make_node<T>("mean", Shape{1}, std::vector<T>{total / n}, {x}, [n](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    shape_error("cross_entropy", logits.shape(),
                "does not match " + std::to_string(targets.size()) + " targets");
  }
  require_finite<T>("cross_entropy", logits.data());
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  std::vector<T> probs(logits.numel());
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
      throw ContractError("cross_entropy: target " + std::to_string(tgt[r]) + " outside vocab");
    }
    const T* z = logits.data().data() + r * vocab;
    T* p = probs.data() + r * vocab;
    const T mx = *std::max_element(z, z + vocab);
    T s = 0;
    for (std::size_t c = 0; c < vocab; ++c) {
      p[c] = std::exp(z[c] - mx);
      s += p[c];
    }
    for (std::size_t c = 0; c < vocab; ++c) p[c] /= s;
    total += (mx + std::log(s)) - z[tgt[r]];
  }
  return make_node<T>("cross_entropy", Shape{1}, std::vector<T>{total / static_cast<T>(n)},
                      {logits},
                      [n, vocab, probs = std::move(probs), tgt = std::move(tgt)](Node<T>& self) {
                        T* g = self.parents[0]->grad_buffer().data();
                        const T w = self.grad[0] / static_cast<T>(n);
                        for (std::size_t r = 0; r < n; ++r) {
                          for (std::size_t c = 0; c < vocab; ++c) {
                            g[r * vocab + c] += w * probs[r * vocab + c];
                          }
                          g[r * vocab + static_cast<std::size_t>(tgt[r])] -= w;
                        }
                      });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) shape_error("gather_rows", x.shape(), "is not rank 2");
  if (rows.empty()) throw ConfigError("gather_rows: empty row list");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw ContractError("gather_rows: row index out of range");
    std::copy_n(x.data().data() + idx[i] * d, d, out.data() + i * d);
  }
  const std::size_t count = idx.size();
  return make_node<T>("gather_rows", Shape{count, d}, std::move(out), {x},
                      [d, idx = std::move(idx)](Node<T>& self) {
                        T* g = self.parents[0]->grad_buffer().data();
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          for (std::size_t c = 0; c < d; ++c) {
                            g[idx[i] * d + c] += self.grad[i * d + c];
                          }
                        }
                      });
}

template <typename T>
Tensor<T> scatter_add_rows(const std::vector<Tensor<T>>& sources,
                           const std::vector<std::vector<std::size_t>>& indices,
                           std::size_t n_rows, std::size_t width) {
  if (sources.size() != indices.size()) {
    throw ConfigError("scatter_add_rows: " + std::to_string(sources.size()) + " sources but " +
                      std::to_string(indices.size()) + " index lists");
  }
  std::vector<T> out(n_rows * width, T(0));
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    if (src.rank() != 2 || src.dim(1) != width || src.dim(0) != indices[s].size()) {
      shape_error("scatter_add_rows", src.shape(),
                  "does not match width " + std::to_string(width) + " and " +
                      std::to_string(indices[s].size()) + " indices");
    }
    for (std::size_t i = 0; i < indices[s].size(); ++i) {
      if (indices[s][i] >= n_rows) throw ContractError("scatter_add_rows: index out of range");
      const T* in = src.data().data() + i * width;
      T* dst = out.data() + indices[s][i] * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += in[c];
    }
  }
  if (sources.empty()) return Tensor<T>::from(Shape{n_rows, width}, std::move(out));
  return make_node<T>("scatter_add_rows", Shape{n_rows, width}, std::move(out), sources,
                      [indices, width](Node<T>& self) {
                        for (std::size_t s = 0; s < indices.size(); ++s) {
                          auto& p = self.parents[s];
                          if (!wants_grad(p)) continue;
                          T* g = p->grad_buffer().data();
                          for (std::size_t i = 0; i < indices[s].size(); ++i) {
                            const T* src = self.grad.data() + indices[s][i] * width;
                            for (std::size_t c = 0; c < width; ++c) g[i * width + c] += src[c];
                          }
                        }
                      });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& factors) {
  if (x.rank() != 2 || factors.rank() != 1 || factors.dim(0) != x.dim(0)) {
    shape_error("scale_rows", x.shape(), factors.shape());
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = x.data()[i * d + c] * factors.data()[i];
  }
  return make_node<T>("scale_rows", x.shape(), std::move(out), {x, factors},
                      [n, d](Node<T>& self) {
                        auto& px = self.parents[0];
                        auto& pf = self.parents[1];
                        if (wants_grad(px)) {
                          T* g = px->grad_buffer().data();
                          for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t c = 0; c < d; ++c) {
                              g[i * d + c] += self.grad[i * d + c] * pf->value[i];
                            }
                          }
                        }
                        if (wants_grad(pf)) {
                          T* g = pf->grad_buffer().data();
                          for (std::size_t i = 0; i < n; ++i) {
                            T acc = 0;
                            for (std::size_t c = 0; c < d; ++c) {
                              acc += self.grad[i * d + c] * px->value[i * d + c];
                            }
                            g[i] += acc;
                          }
                        }
                      });
}

template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::size_t> rows,
               std::span<const std::size_t> cols) {
  if (x.rank() != 2) shape_error("pick", x.shape(), "is not rank 2");
  if (rows.size() != cols.size() || rows.empty()) {
    throw ConfigError("pick: need equal, non-empty row and column lists");
  }
  const std::size_t m = x.dim(1);
  std::vector<std::size_t> flat(rows.size());
  std::vector<T> out(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j] >= x.dim(0) || cols[j] >= m) throw ContractError("pick: index out of range");
    flat[j] = rows[j] * m + cols[j];
    out[j] = x.data()[flat[j]];
  }
  return make_node<T>("pick", Shape{rows.size()}, std::move(out), {x},
                      [flat = std::move(flat)](Node<T>& self) {
                        T* g = self.parents[0]->grad_buffer().data();
                        for (std::size_t j = 0; j < flat.size(); ++j) g[flat[j]] += self.grad[j];
                      });
}

template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t seq_len, std::size_t n_heads, double base) {
  if (x.rank() != 2 || seq_len == 0 || n_heads == 0 || x.dim(1) % n_heads != 0 ||
      (x.dim(1) / n_heads) % 2 != 0 || x.dim(0) % seq_len != 0) {
    shape_error("rope", x.shape(),
                "is not [batch*" + std::to_string(seq_len) + ", heads*even_head_dim] with " +
                    std::to_string(n_heads) + " heads");
  }
  const std::size_t rows = x.dim(0), d = x.dim(1);
  const std::size_t hd = d / n_heads, half = hd / 2;
  std::vector<T> cosv(seq_len * half), sinv(seq_len * half);
  for (std::size_t p = 0; p < seq_len; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta =
          static_cast<double>(p) * std::pow(base, -2.0 * static_cast<double>(i) / hd);
      cosv[p * half + i] = static_cast<T>(std::cos(theta));
      sinv[p * half + i] = static_cast<T>(std::sin(theta));
    }
  }
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t p = r % seq_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const T* in = x.data().data() + r * d + h * hd;
      T* o = out.data() + r * d + h * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cosv[p * half + i], s = sinv[p * half + i];
        o[i] = in[i] * c - in[i + half] * s;
        o[i + half] = in[i] * s + in[i + half] * c;
      }
    }
  }
  return make_node<T>(
      "rope", x.shape(), std::move(out), {x},
      [rows, d, hd, half, n_heads, seq_len, cosv = std::move(cosv),
       sinv = std::move(sinv)](Node<T>& self) {
        T* g = self.parents[0]->grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t p = r % seq_len;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* go = self.grad.data() + r * d + h * hd;
            T* gi = g + r * d + h * hd;
            for (std::size_t i = 0; i < half; ++i) {
              const T c = cosv[p * half + i], s = sinv[p * half + i];
              gi[i] += go[i] * c + go[i + half] * s;
              gi[i + half] += -go[i] * s + go[i + half] * c;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t batch, std::size_t seq_len, std::size_t n_heads) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    shape_error("causal_attention", q.shape(), k.shape() == q.shape() ? v.shape() : k.shape());
  }
  if (q.rank() != 2 || q.dim(0) != batch * seq_len || n_heads == 0 || q.dim(1) % n_heads != 0) {
    shape_error("causal_attention", q.shape(),
                "is not [" + std::to_string(batch) + "*" + std::to_string(seq_len) +
                    ", heads*head_dim] with " + std::to_string(n_heads) + " heads");
  }
  const std::size_t d = q.dim(1), hd = d / n_heads, T_ = seq_len;
  const T scl = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> probs(batch * n_heads * T_ * T_, T(0));
  std::vector<T> out(q.numel(), T(0));
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  std::vector<T> row(T_);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* P = probs.data() + (b * n_heads + h) * T_ * T_;
      for (std::size_t i = 0; i < T_; ++i) {
        const T* qi = Q + (b * T_ + i) * d + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = K + (b * T_ + j) * d + h * hd;
          T s = 0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          row[j] = s * scl;
          mx = std::max(mx, row[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        T* oi = out.data() + (b * T_ + i) * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const T pij = row[j] / total;
          P[i * T_ + j] = pij;
          const T* vj = V + (b * T_ + j) * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }
  return make_node<T>(
      "causal_attention", q.shape(), std::move(out), {q, k, v},
      [batch, n_heads, T_, d, hd, scl, probs = std::move(probs)](Node<T>& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        const T* Q = pq->value.data();
        const T* K = pk->value.data();
        const T* V = pv->value.data();
        T* gQ = wants_grad(pq) ? pq->grad_buffer().data() : nullptr;
        T* gK = wants_grad(pk) ? pk->grad_buffer().data() : nullptr;
        T* gV = wants_grad(pv) ? pv->grad_buffer().data() : nullptr;
        std::vector<T> dp(T_);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* P = probs.data() + (b * n_heads + h) * T_ * T_;
            for (std::size_t i = 0; i < T_; ++i) {
              const T* go = self.grad.data() + (b * T_ + i) * d + h * hd;
              T dot = 0;
              for (std::size_t j = 0; j <= i; ++j) {
                const T* vj = V + (b * T_ + j) * d + h * hd;
                T s = 0;
                for (std::size_t c = 0; c < hd; ++c) s += go[c] * vj[c];
                dp[j] = s;
                dot += s * P[i * T_ + j];
                if (gV) {
                  T* gvj = gV + (b * T_ + j) * d + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) gvj[c] += P[i * T_ + j] * go[c];
                }
              }
              const T* qi = Q + (b * T_ + i) * d + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const T ds = P[i * T_ + j] * (dp[j] - dot) * scl;
                if (ds == T(0)) continue;
                const T* kj = K + (b * T_ + j) * d + h * hd;
                if (gQ) {
                  T* gqi = gQ + (b * T_ + i) * d + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
                }
                if (gK) {
                  T* gkj = gK + (b * T_ + j) * d + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

#define CPMOE_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> softmax(const Tensor<T>&);                                             \
  template Tensor<T> silu(const Tensor<T>&);                                                \
  template Tensor<T> log(const Tensor<T>&);                                                 \
  template Tensor<T> rmsnorm(const Tensor<T>&, const Tensor<T>&, T);                        \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>);            \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);        \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                    \
  template Tensor<T> transpose(const Tensor<T>&);                                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);        \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);           \
  template Tensor<T> scatter_add_rows(const std::vector<Tensor<T>>&,                        \
                                      const std::vector<std::vector<std::size_t>>&,         \
                                      std::size_t, std::size_t);                            \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> pick(const Tensor<T>&, std::span<const std::size_t>,                   \
                          std::span<const std::size_t>);                                    \
  template Tensor<T> rope(const Tensor<T>&, std::size_t, std::size_t, double);              \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                      std::size_t, std::size_t, std::size_t);

CPMOE_INSTANTIATE_OPS(float)
CPMOE_INSTANTIATE_OPS(double)

#undef CPMOE_INSTANTIATE_OPS

}  // namespace cpmoe::ops
