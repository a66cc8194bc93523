#include "dnfn/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <type_traits>

namespace dnfn::kernels {

namespace {

template <typename T>
void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n,
          std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  const auto M = static_cast<blasint>(m);
  const auto N = static_cast<blasint>(n);
  const auto K = static_cast<blasint>(k);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, M, N, K, 1.0f, a,
                static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta,
                c, static_cast<blasint>(ldc));
  } else {
    cblas_dgemm(CblasRowMajor, ta, tb, M, N, K, 1.0, a,
                static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta,
                c, static_cast<blasint>(ldc));
  }
}

}  // namespace

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, std::size_t m,
                    std::size_t in, std::size_t out) {
  if (m == 0 || out == 0) return;
  if (in == 0) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t o = 0; o < out; ++o) y[r * out + o] = b ? b[o] : T{};
    return;
  }
  T beta{};
  if (b) {
#pragma omp parallel for schedule(static)
    for (std::size_t r = 0; r < m; ++r) std::copy(b, b + out, y + r * out);
    beta = T{1};
  }
  gemm<T>(CblasNoTrans, CblasTrans, m, out, in, x, in, w, in, beta, y, out);
}

template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx, std::size_t m,
                           std::size_t in, std::size_t out) {
  if (m == 0 || in == 0 || out == 0) return;
  gemm<T>(CblasNoTrans, CblasNoTrans, m, in, out, dy, out, w, in, T{1}, dx, in);
}

template <typename T>
void linear_backward_params(const T* dy, const T* x, T* dw, T* db,
                            std::size_t m, std::size_t in, std::size_t out) {
  if (m == 0 || out == 0) return;
  if (in > 0 && dw) {
    gemm<T>(CblasTrans, CblasNoTrans, out, in, m, dy, out, x, in, T{1}, dw, in);
  }
  if (db) {
    for (std::size_t r = 0; r < m; ++r) {
      const T* g = dy + r * out;
      for (std::size_t o = 0; o < out; ++o) db[o] += g[o];
    }
  }
}

namespace serial {

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, std::size_t m,
                    std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      T acc = b ? b[o] : T{};
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[o * in + i];
      y[r * out + o] = acc;
    }
  }
}

template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx, std::size_t m,
                           std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < in; ++i) {
      T acc{};
      for (std::size_t o = 0; o < out; ++o) acc += dy[r * out + o] * w[o * in + i];
      dx[r * in + i] += acc;
    }
  }
}

template <typename T>
void linear_backward_params(const T* dy, const T* x, T* dw, T* db,
                            std::size_t m, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; dw && i < in; ++i) {
      T acc{};
      for (std::size_t r = 0; r < m; ++r) acc += dy[r * out + o] * x[r * in + i];
      dw[o * in + i] += acc;
    }
    if (db) {
      T acc{};
      for (std::size_t r = 0; r < m; ++r) acc += dy[r * out + o];
      db[o] += acc;
    }
  }
}

template void linear_forward<float>(const float*, const float*, const float*,
                                    float*, std::size_t, std::size_t, std::size_t);
template void linear_forward<double>(const double*, const double*, const double*,
                                     double*, std::size_t, std::size_t, std::size_t);
template void linear_backward_input<float>(const float*, const float*, float*,
                                           std::size_t, std::size_t, std::size_t);
template void linear_backward_input<double>(const double*, const double*, double*,
                                            std::size_t, std::size_t, std::size_t);
template void linear_backward_params<float>(const float*, const float*, float*,
                                            float*, std::size_t, std::size_t,
                                            std::size_t);
template void linear_backward_params<double>(const double*, const double*,
                                             double*, double*, std::size_t,
                                             std::size_t, std::size_t);

}  // namespace serial

template void linear_forward<float>(const float*, const float*, const float*,
                                    float*, std::size_t, std::size_t, std::size_t);
template void linear_forward<double>(const double*, const double*, const double*,
                                     double*, std::size_t, std::size_t, std::size_t);
template void linear_backward_input<float>(const float*, const float*, float*,
                                           std::size_t, std::size_t, std::size_t);
template void linear_backward_input<double>(const double*, const double*, double*,
                                            std::size_t, std::size_t, std::size_t);
template void linear_backward_params<float>(const float*, const float*, float*,
                                            float*, std::size_t, std::size_t,
                                            std::size_t);
template void linear_backward_params<double>(const double*, const double*,
                                             double*, double*, std::size_t,
                                             std::size_t, std::size_t);

}  // namespace dnfn::kernels
