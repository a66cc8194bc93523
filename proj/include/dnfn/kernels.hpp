#pragma once

#include <cstddef>

namespace dnfn::kernels {

// Dense affine kernels on row-major buffers.
//   x: M x I, w: O x I, b: O (nullable), y: M x O
// Backward variants accumulate into their outputs; dw and db may be null.

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, std::size_t m,
                    std::size_t in, std::size_t out);

template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx, std::size_t m,
                           std::size_t in, std::size_t out);

template <typename T>
void linear_backward_params(const T* dy, const T* x, T* dw, T* db,
                            std::size_t m, std::size_t in, std::size_t out);

/// Naive triple loops. Kept as the reference the tuned kernels are tested
/// and benchmarked against.
namespace serial {

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, std::size_t m,
                    std::size_t in, std::size_t out);

template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx, std::size_t m,
                           std::size_t in, std::size_t out);

template <typename T>
void linear_backward_params(const T* dy, const T* x, T* dw, T* db,
                            std::size_t m, std::size_t in, std::size_t out);

}  // namespace serial
}  // namespace dnfn::kernels
