#include "dnfn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dnfn/kernels.hpp"

namespace dnfn {

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& v, std::size_t axis) {
  if (axis >= v.rank()) {
    throw DomainError("softmax: axis " + std::to_string(axis) +
                      " invalid for shape " + shape_str(v.shape));
  }
  const std::size_t n = v.shape[axis];
  if (n == 0) throw DomainError("softmax: empty extent along axis " + std::to_string(axis));
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < v.rank(); ++d) inner *= v.shape[d];
  const std::size_t outer = v.size() / (n * inner);
  Tensor<T> out(v.shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = v[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, v[base + j * inner]);
      T sum{};
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(v[base + j * inner] - mx);
        out[base + j * inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= sum;
    }
  }
  return out;
}

template Tensor<float> softmax(const Tensor<float>&, std::size_t);
template Tensor<double> softmax(const Tensor<double>&, std::size_t);

}  // namespace dnfn

namespace dnfn::ops {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

template <typename T>
void same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
  }
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_words(std::span<const std::uint32_t> words) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto w : words) h = splitmix(h ^ w);
  return h;
}

}  // namespace

double hash_uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t stream,
                    std::uint64_t index) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ step);
  h = splitmix(h ^ stream);
  h = splitmix(h ^ index);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> b) {
  same_tape(x, w, "linear");
  const auto& X = x.value();
  const auto& W = w.value();
  if (W.rank() != 2 || X.cols() != W.shape[1]) {
    throw DimensionError("linear: input shape " + shape_str(X.shape) +
                         " incompatible with weight shape " + shape_str(W.shape));
  }
  const std::size_t in = W.shape[1];
  const std::size_t out = W.shape[0];
  if (b && b->value().size() != out) {
    throw DimensionError("linear: bias shape " + shape_str(b->shape()) +
                         " for weight shape " + shape_str(W.shape));
  }
  const std::size_t m = X.rows();
  Tensor<T> y({m, out});
  kernels::linear_forward(X.values.data(), W.values.data(),
                          b ? b->value().values.data() : nullptr, y.values.data(),
                          m, in, out);
  const std::size_t bi = b ? b->id : kNone;
  return x.tape->record(
      std::move(y), {x.id, w.id, b ? b->id : x.id},
      [xi = x.id, wi = w.id, bi, m, in, out](Tape<T>& t, std::size_t self) {
        const T* dy = t.grad(self).data();
        if (t.requires_grad(xi)) {
          kernels::linear_backward_input(dy, t.value(wi).values.data(),
                                         t.grad(xi).data(), m, in, out);
        }
        T* dw = t.requires_grad(wi) ? t.grad(wi).data() : nullptr;
        T* db = (bi != kNone && t.requires_grad(bi)) ? t.grad(bi).data() : nullptr;
        if (dw || db) {
          kernels::linear_backward_params(dy, t.value(xi).values.data(), dw, db,
                                          m, in, out);
        }
      });
}

namespace {

// Batch normalization with an optional leaky rectifier fused in (slope 1
// means none). Backward recovers the rectifier's branch from xhat.
template <typename T>
Var<T> norm_impl(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                 Tensor<T>& running_var, T eps, T momentum, T slope) {
  const auto& X = x.value();
  const std::size_t rows = X.rows();
  const std::size_t cols = X.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols ||
      running_mean.size() != cols || running_var.size() != cols) {
    throw DimensionError("batch_norm: input shape " + shape_str(X.shape) +
                         " vs scale shape " + shape_str(gamma.shape()));
  }
  if (rows == 0) throw DimensionError("batch_norm: empty input");
  const bool train = x.tape->training();
  std::vector<T> mean(cols, T{});
  std::vector<T> var(cols, T{});
  if (train) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = X.row(r);
      for (std::size_t c = 0; c < cols; ++c) mean[c] += xr[c];
    }
    for (auto& m : mean) m /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = X.row(r);
      for (std::size_t c = 0; c < cols; ++c) {
        const T d = xr[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<T>(rows);
    const T unbias = rows > 1 ? static_cast<T>(rows) / static_cast<T>(rows - 1) : T{1};
    for (std::size_t c = 0; c < cols; ++c) {
      running_mean[c] = momentum * running_mean[c] + (T{1} - momentum) * mean[c];
      running_var[c] = momentum * running_var[c] + (T{1} - momentum) * var[c] * unbias;
    }
  } else {
    mean = running_mean.values;
    var = running_var.values;
  }
  std::vector<T> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = T{1} / std::sqrt(var[c] + eps);

  const T* g = gamma.value().values.data();
  const T* bt = beta.value().values.data();
  const bool act = slope != T{1};
  Tensor<T> xhat({rows, cols});
  Tensor<T> y({rows, cols});
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.row(r);
    T* hr = xhat.row(r);
    T* yr = y.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      hr[c] = (xr[c] - mean[c]) * inv_std[c];
      const T z = g[c] * hr[c] + bt[c];
      yr[c] = act && !(z > T{}) ? slope * z : z;
    }
  }
  if (act && x.tape->track_regime()) {
    std::vector<std::uint32_t> bits((rows * cols + 31) / 32, 0);
    for (std::size_t i = 0; i < rows * cols; ++i) {
      if (g[i % cols] * xhat[i] + bt[i % cols] > T{}) bits[i / 32] |= 1u << (i % 32);
    }
    x.tape->note_regime(hash_words(bits));
  }
  return x.tape->record(
      std::move(y), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, rows, cols, train, slope, act,
       xhat = std::move(xhat.values), inv_std](Tape<T>& t, std::size_t self) {
        const T* dy = t.grad(self).data();
        const T* g = t.value(gi).values.data();
        const T* b = t.value(bi).values.data();
        const T* h = xhat.data();
        // Gradient at the normalized output, through the rectifier.
        auto dz = [&](std::size_t e, std::size_t c) {
          return act && !(g[c] * h[e] + b[c] > T{}) ? slope * dy[e] : dy[e];
        };
        std::vector<T> sum_dz(cols, T{});
        std::vector<T> sum_dz_xhat(cols, T{});
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t e = r * cols + c;
            const T d = dz(e, c);
            sum_dz[c] += d;
            sum_dz_xhat[c] += d * h[e];
          }
        }
        if (t.requires_grad(gi)) {
          auto& dg = t.grad(gi);
          for (std::size_t c = 0; c < cols; ++c) dg[c] += sum_dz_xhat[c];
        }
        if (t.requires_grad(bi)) {
          auto& db = t.grad(bi);
          for (std::size_t c = 0; c < cols; ++c) db[c] += sum_dz[c];
        }
        if (!t.requires_grad(xi)) return;
        T* dx = t.grad(xi).data();
        const T n = static_cast<T>(rows);
        std::vector<T> scale(cols), shift(cols), slope_h(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          scale[c] = g[c] * inv_std[c];
          shift[c] = train ? sum_dz[c] / n : T{};
          slope_h[c] = train ? sum_dz_xhat[c] / n : T{};
        }
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t e = r * cols + c;
            dx[e] += scale[c] * (dz(e, c) - shift[c] - h[e] * slope_h[c]);
          }
        }
      });
}

}  // namespace

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, T eps, T momentum) {
  return norm_impl(x, gamma, beta, running_mean, running_var, eps, momentum, T{1});
}

template <typename T>
Var<T> batch_norm_leaky(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                        Tensor<T>& running_var, T slope, T eps, T momentum) {
  return norm_impl(x, gamma, beta, running_mean, running_var, eps, momentum, slope);
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  const auto& X = x.value();
  Tensor<T> y(X.shape);
  const std::size_t n = X.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = X[i] > T{} ? X[i] : slope * X[i];
  if (x.tape->track_regime()) {
    std::vector<std::uint32_t> bits((n + 31) / 32, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (X[i] > T{}) bits[i / 32] |= 1u << (i % 32);
    }
    x.tape->note_regime(hash_words(bits));
  }
  return x.tape->record(std::move(y), {x.id},
                        [xi = x.id, slope, n](Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          const auto& xv = t.value(xi);
                          auto& dx = t.grad(xi);
                          for (std::size_t i = 0; i < n; ++i) {
                            dx[i] += xv[i] > T{} ? dy[i] : slope * dy[i];
                          }
                        });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b, "add");
  same_shape(a.value(), b.value(), "add");
  Tensor<T> y(a.value().shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return a.tape->record(std::move(y), {a.id, b.id},
                        [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          for (auto id : {ai, bi}) {
                            if (!t.requires_grad(id)) continue;
                            auto& d = t.grad(id);
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
                          }
                        });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b, "mul");
  same_shape(a.value(), b.value(), "mul");
  const auto& A = a.value();
  const auto& B = b.value();
  Tensor<T> y(A.shape);
  const std::size_t n = y.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = A[i] * B[i];
  return a.tape->record(std::move(y), {a.id, b.id},
                        [ai = a.id, bi = b.id, n](Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          if (t.requires_grad(ai)) {
                            const auto& bv = t.value(bi);
                            auto& da = t.grad(ai);
                            for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i];
                          }
                          if (t.requires_grad(bi)) {
                            const auto& av = t.value(ai);
                            auto& db = t.grad(bi);
                            for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * av[i];
                          }
                        });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  same_tape(a, b, "concat_cols");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rows() != B.rows()) {
    throw DimensionError("concat_cols: shape " + shape_str(A.shape) + " vs " +
                         shape_str(B.shape));
  }
  const std::size_t rows = A.rows();
  const std::size_t ca = A.cols();
  const std::size_t cb = B.cols();
  Tensor<T> y({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(A.row(r), A.row(r) + ca, y.row(r));
    std::copy(B.row(r), B.row(r) + cb, y.row(r) + ca);
  }
  return a.tape->record(std::move(y), {a.id, b.id},
                        [ai = a.id, bi = b.id, rows, ca, cb](Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          const std::size_t w = ca + cb;
                          if (t.requires_grad(ai)) {
                            auto& da = t.grad(ai);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < ca; ++c) da[r * ca + c] += dy[r * w + c];
                          }
                          if (t.requires_grad(bi)) {
                            auto& db = t.grad(bi);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cb; ++c)
                                db[r * cb + c] += dy[r * w + ca + c];
                          }
                        });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::uint32_t> rows) {
  const auto& X = x.value();
  const std::size_t cols = X.cols();
  const std::size_t src_rows = X.rows();
  for (auto r : rows) {
    if (r >= src_rows) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " outside " +
                       shape_str(X.shape));
    }
  }
  const std::size_t n = rows.size();
  Tensor<T> y({n, cols});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) std::copy(X.row(rows[i]), X.row(rows[i]) + cols, y.row(i));
  return x.tape->record(
      std::move(y), {x.id},
      [xi = x.id, idx = std::vector<std::uint32_t>(rows.begin(), rows.end()), cols](
          Tape<T>& t, std::size_t self) {
        const auto& dy = t.grad(self);
        auto& dx = t.grad(xi);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          T* d = dx.data() + idx[i] * cols;
          const T* g = dy.data() + i * cols;
          for (std::size_t c = 0; c < cols; ++c) d[c] += g[c];
        }
      });
}

template <typename T>
Var<T> edge_diff(Var<T> p, std::span<const std::uint32_t> nbr, std::size_t k,
                 std::optional<Var<T>> bias) {
  const auto& P = p.value();
  const std::size_t cols = P.cols();
  if (k == 0 || nbr.size() % k != 0) {
    throw DimensionError("edge_diff: " + std::to_string(nbr.size()) +
                         " neighbor slots not divisible by k=" + std::to_string(k));
  }
  const std::size_t centers = nbr.size() / k;
  if (centers > P.rows()) {
    throw DimensionError("edge_diff: " + std::to_string(centers) + " centers for input " +
                         shape_str(P.shape));
  }
  for (auto r : nbr) {
    if (r >= P.rows()) throw IndexError("edge_diff: neighbor row " + std::to_string(r) + " outside " + shape_str(P.shape));
  }
  if (bias && bias->value().size() != cols) {
    throw DimensionError("edge_diff: bias shape " + shape_str(bias->shape()) +
                         " for input " + shape_str(P.shape));
  }
  const T* b = bias ? bias->value().values.data() : nullptr;
  Tensor<T> y({nbr.size(), cols});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < centers; ++i) {
    const T* pc = P.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const T* pn = P.row(nbr[i * k + j]);
      T* out = y.row(i * k + j);
      for (std::size_t c = 0; c < cols; ++c) out[c] = pn[c] - pc[c] + (b ? b[c] : T{});
    }
  }
  const std::size_t bi = bias ? bias->id : kNone;
  return p.tape->record(
      std::move(y), {p.id, bias ? bias->id : p.id},
      [pi = p.id, bi, idx = std::vector<std::uint32_t>(nbr.begin(), nbr.end()), k,
       centers, cols](Tape<T>& t, std::size_t self) {
        const auto& dy = t.grad(self);
        if (t.requires_grad(pi)) {
          auto& dp = t.grad(pi);
          for (std::size_t i = 0; i < centers; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              const T* g = dy.data() + (i * k + j) * cols;
              T* dn = dp.data() + idx[i * k + j] * cols;
              T* dc = dp.data() + i * cols;
              for (std::size_t c = 0; c < cols; ++c) {
                dn[c] += g[c];
                dc[c] -= g[c];
              }
            }
          }
        }
        if (bi != kNone && t.requires_grad(bi)) {
          auto& db = t.grad(bi);
          for (std::size_t e = 0; e < idx.size(); ++e)
            for (std::size_t c = 0; c < cols; ++c) db[c] += dy[e * cols + c];
        }
      });
}

template <typename T>
Var<T> group_max(Var<T> x, std::size_t group) {
  const auto& X = x.value();
  if (group == 0 || X.rows() % group != 0) {
    throw DimensionError("group_max: " + shape_str(X.shape) +
                         " not divisible into groups of " + std::to_string(group));
  }
  const std::size_t cols = X.cols();
  const std::size_t groups = X.rows() / group;
  Tensor<T> y({groups, cols});
  std::vector<std::uint32_t> arg(groups * cols);
#pragma omp parallel for schedule(static)
  for (std::size_t g = 0; g < groups; ++g) {
    T* out = y.row(g);
    std::uint32_t* a = arg.data() + g * cols;
    std::copy(X.row(g * group), X.row(g * group) + cols, out);
    std::fill(a, a + cols, 0u);
    for (std::size_t j = 1; j < group; ++j) {
      const T* xr = X.row(g * group + j);
      for (std::size_t c = 0; c < cols; ++c) {
        if (xr[c] > out[c]) {
          out[c] = xr[c];
          a[c] = static_cast<std::uint32_t>(j);
        }
      }
    }
  }
  if (x.tape->track_regime()) x.tape->note_regime(hash_words(arg));
  return x.tape->record(std::move(y), {x.id},
                        [xi = x.id, arg = std::move(arg), group, groups, cols](
                            Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          auto& dx = t.grad(xi);
                          for (std::size_t g = 0; g < groups; ++g)
                            for (std::size_t c = 0; c < cols; ++c)
                              dx[(g * group + arg[g * cols + c]) * cols + c] += dy[g * cols + c];
                        });
}

template <typename T>
Var<T> group_sum(Var<T> x, std::size_t group) {
  const auto& X = x.value();
  if (group == 0 || X.rows() % group != 0) {
    throw DimensionError("group_sum: " + shape_str(X.shape) +
                         " not divisible into groups of " + std::to_string(group));
  }
  const std::size_t cols = X.cols();
  const std::size_t groups = X.rows() / group;
  Tensor<T> y({groups, cols});
#pragma omp parallel for schedule(static)
  for (std::size_t g = 0; g < groups; ++g) {
    T* out = y.row(g);
    for (std::size_t j = 0; j < group; ++j) {
      const T* xr = X.row(g * group + j);
      for (std::size_t c = 0; c < cols; ++c) out[c] += xr[c];
    }
  }
  return x.tape->record(std::move(y), {x.id},
                        [xi = x.id, group, groups, cols](Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          auto& dx = t.grad(xi);
                          for (std::size_t g = 0; g < groups; ++g)
                            for (std::size_t j = 0; j < group; ++j)
                              for (std::size_t c = 0; c < cols; ++c)
                                dx[(g * group + j) * cols + c] += dy[g * cols + c];
                        });
}

template <typename T>
Var<T> scale_rows(Var<T> x, Var<T> w) {
  same_tape(x, w, "scale_rows");
  const auto& X = x.value();
  const auto& W = w.value();
  if (W.size() != X.rows()) {
    throw DimensionError("scale_rows: weights " + shape_str(W.shape) + " for input " +
                         shape_str(X.shape));
  }
  const std::size_t rows = X.rows();
  const std::size_t cols = X.cols();
  Tensor<T> y(X.shape);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = W[r] * X[r * cols + c];
  return x.tape->record(std::move(y), {x.id, w.id},
                        [xi = x.id, wi = w.id, rows, cols](Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          if (t.requires_grad(xi)) {
                            const auto& wv = t.value(wi);
                            auto& dx = t.grad(xi);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c)
                                dx[r * cols + c] += wv[r] * dy[r * cols + c];
                          }
                          if (t.requires_grad(wi)) {
                            const auto& xv = t.value(xi);
                            auto& dw = t.grad(wi);
                            for (std::size_t r = 0; r < rows; ++r) {
                              T acc{};
                              for (std::size_t c = 0; c < cols; ++c)
                                acc += xv[r * cols + c] * dy[r * cols + c];
                              dw[r] += acc;
                            }
                          }
                        });
}

template <typename T>
Var<T> pair_dot(Var<T> d, std::span<const std::uint32_t> nbr, std::size_t k) {
  const auto& D = d.value();
  if (k == 0 || nbr.size() % k != 0 || nbr.size() / k > D.rows()) {
    throw DimensionError("pair_dot: " + std::to_string(nbr.size()) +
                         " neighbor slots with k=" + std::to_string(k) + " for " +
                         shape_str(D.shape));
  }
  for (auto r : nbr) {
    if (r >= D.rows()) throw IndexError("pair_dot: row " + std::to_string(r) + " outside " + shape_str(D.shape));
  }
  const std::size_t centers = nbr.size() / k;
  const std::size_t cols = D.cols();
  Tensor<T> y({centers, k});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < centers; ++i) {
    const T* a = D.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const T* b = D.row(nbr[i * k + j]);
      T acc{};
      for (std::size_t c = 0; c < cols; ++c) acc += a[c] * b[c];
      y[i * k + j] = acc;
    }
  }
  return d.tape->record(
      std::move(y), {d.id},
      [di = d.id, idx = std::vector<std::uint32_t>(nbr.begin(), nbr.end()), k, centers,
       cols](Tape<T>& t, std::size_t self) {
        const auto& dy = t.grad(self);
        const auto& dv = t.value(di);
        auto& dd = t.grad(di);
        for (std::size_t i = 0; i < centers; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T g = dy[i * k + j];
            const std::size_t n = idx[i * k + j];
            for (std::size_t c = 0; c < cols; ++c) {
              dd[i * cols + c] += g * dv[n * cols + c];
              dd[n * cols + c] += g * dv[i * cols + c];
            }
          }
        }
      });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const auto& X = x.value();
  if (X.cols() == 0) throw DomainError("softmax_rows: empty rows in " + shape_str(X.shape));
  Tensor<T> y = softmax(X, X.rank() - 1);
  const std::size_t rows = X.rows();
  const std::size_t cols = X.cols();
  return x.tape->record(std::move(y), {x.id},
                        [xi = x.id, rows, cols](Tape<T>& t, std::size_t self) {
                          const auto& dy = t.grad(self);
                          const auto& yv = t.value(self);
                          auto& dx = t.grad(xi);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T dot{};
                            for (std::size_t c = 0; c < cols; ++c)
                              dot += dy[r * cols + c] * yv[r * cols + c];
                            for (std::size_t c = 0; c < cols; ++c)
                              dx[r * cols + c] += yv[r * cols + c] * (dy[r * cols + c] - dot);
                          }
                        });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  const auto& L = logits.value();
  const std::size_t batch = L.rows();
  const std::size_t classes = L.cols();
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(L.shape));
  }
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  Tensor<T> probs({batch, classes});
  T loss{};
  for (std::size_t r = 0; r < batch; ++r) {
    const T* z = L.row(r);
    const T mx = *std::max_element(z, z + classes);
    T sum{};
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(z[c] - lse);
    loss += lse - z[labels[r]];
  }
  loss /= static_cast<T>(batch);
  return logits.tape->record(
      Tensor<T>({1}, std::vector<T>{loss}), {logits.id},
      [li = logits.id, probs = std::move(probs.values),
       lab = std::vector<int>(labels.begin(), labels.end()), batch,
       classes](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] / static_cast<T>(batch);
        auto& dl = t.grad(li);
        for (std::size_t r = 0; r < batch; ++r) {
          for (std::size_t c = 0; c < classes; ++c) {
            const T onehot = static_cast<std::size_t>(lab[r]) == c ? T{1} : T{};
            dl[r * classes + c] += g * (probs[r * classes + c] - onehot);
          }
        }
      });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw DomainError("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
  }
  auto& tape = *x.tape;
  if (!tape.training() || rate == 0.0) return x;
  const std::uint64_t stream = tape.next_stream_id();
  const auto& X = x.value();
  const std::size_t n = X.size();
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = hash_uniform(tape.dropout_seed(), tape.dropout_step(), stream, i) < rate ? T{} : keep;
  }
  Tensor<T> y(X.shape);
  for (std::size_t i = 0; i < n; ++i) y[i] = X[i] * mask[i];
  return tape.record(std::move(y), {x.id},
                     [xi = x.id, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
                       const auto& dy = t.grad(self);
                       auto& dx = t.grad(xi);
                       for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += dy[i] * mask[i];
                     });
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& c) {
  same_shape(x.value(), c, "weighted_sum");
  T acc{};
  for (std::size_t i = 0; i < c.size(); ++i) acc += x.value()[i] * c[i];
  return x.tape->record(Tensor<T>({1}, std::vector<T>{acc}), {x.id},
                        [xi = x.id, c = c.values](Tape<T>& t, std::size_t self) {
                          const T g = t.grad(self)[0];
                          auto& dx = t.grad(xi);
                          for (std::size_t i = 0; i < c.size(); ++i) dx[i] += g * c[i];
                        });
}

#define DNFN_INSTANTIATE(T)                                                              \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                        \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, T, T);     \
  template Var<T> batch_norm_leaky(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, T, T, T); \
  template Var<T> leaky_relu(Var<T>, T);                                                \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> concat_cols(Var<T>, Var<T>);                                          \
  template Var<T> gather_rows(Var<T>, std::span<const std::uint32_t>);                  \
  template Var<T> edge_diff(Var<T>, std::span<const std::uint32_t>, std::size_t,        \
                            std::optional<Var<T>>);                                     \
  template Var<T> group_max(Var<T>, std::size_t);                                       \
  template Var<T> group_sum(Var<T>, std::size_t);                                       \
  template Var<T> scale_rows(Var<T>, Var<T>);                                           \
  template Var<T> pair_dot(Var<T>, std::span<const std::uint32_t>, std::size_t);        \
  template Var<T> softmax_rows(Var<T>);                                                 \
  template Var<T> cross_entropy(Var<T>, std::span<const int>);                          \
  template Var<T> dropout(Var<T>, double);                                              \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);

DNFN_INSTANTIATE(float)
DNFN_INSTANTIATE(double)

#undef DNFN_INSTANTIATE

}  // namespace dnfn::ops
