#pragma once

#include <cstddef>

namespace artenc {

// Dot product with four interleaved accumulators combined in a fixed
// order; the order is part of the determinism contract and also lets the
// compiler vectorize without -ffast-math.
template <typename T>
inline T dot_k(const T* a, const T* b, std::size_t n) {
    T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) acc0 += a[i] * b[i];
    return ((acc0 + acc1) + (acc2 + acc3));
}

// y += alpha * x
template <typename T>
inline void axpy_k(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace artenc
