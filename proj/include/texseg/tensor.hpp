#pragma once

// Dense float tensor plus the three GEMM variants the conv layers need.
// Inner loops are unrolled over the reduction dimension so the compiler can
// vectorize them; parallel regions split over output rows only, keeping
// results bit-reproducible for any thread count.

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace texseg {

struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }
    void zero() { std::fill(data.begin(), data.end(), 0.0f); }

    int dim(size_t i) const { return shape.at(i); }
};

// C[M x N] = A[M x K] * B[K x N], optionally accumulating into C.
inline void gemm_nn(const float* A, const float* B, float* C, int M, int K, int N,
                    bool accumulate = false) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int m = 0; m < M; ++m) {
        float* __restrict__ crow = C + static_cast<std::int64_t>(m) * N;
        if (!accumulate)
            for (int n = 0; n < N; ++n) crow[n] = 0.0f;
        const float* arow = A + static_cast<std::int64_t>(m) * K;
        int k = 0;
        for (; k + 4 <= K; k += 4) {
            const float a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
            const float* __restrict__ b0 = B + static_cast<std::int64_t>(k) * N;
            const float* __restrict__ b1 = b0 + N;
            const float* __restrict__ b2 = b1 + N;
            const float* __restrict__ b3 = b2 + N;
#ifdef _OPENMP
#pragma omp simd
#endif
            for (int n = 0; n < N; ++n)
                crow[n] += a0 * b0[n] + a1 * b1[n] + a2 * b2[n] + a3 * b3[n];
        }
        for (; k < K; ++k) {
            const float a = arow[k];
            const float* __restrict__ brow = B + static_cast<std::int64_t>(k) * N;
#ifdef _OPENMP
#pragma omp simd
#endif
            for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// C[K x N] = A[M x K]^T * B[M x N]
inline void gemm_tn(const float* A, const float* B, float* C, int M, int K, int N,
                    bool accumulate = false) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int k = 0; k < K; ++k) {
        float* __restrict__ crow = C + static_cast<std::int64_t>(k) * N;
        if (!accumulate)
            for (int n = 0; n < N; ++n) crow[n] = 0.0f;
        int m = 0;
        for (; m + 4 <= M; m += 4) {
            const float a0 = A[static_cast<std::int64_t>(m) * K + k];
            const float a1 = A[static_cast<std::int64_t>(m + 1) * K + k];
            const float a2 = A[static_cast<std::int64_t>(m + 2) * K + k];
            const float a3 = A[static_cast<std::int64_t>(m + 3) * K + k];
            const float* __restrict__ b0 = B + static_cast<std::int64_t>(m) * N;
            const float* __restrict__ b1 = b0 + N;
            const float* __restrict__ b2 = b1 + N;
            const float* __restrict__ b3 = b2 + N;
#ifdef _OPENMP
#pragma omp simd
#endif
            for (int n = 0; n < N; ++n)
                crow[n] += a0 * b0[n] + a1 * b1[n] + a2 * b2[n] + a3 * b3[n];
        }
        for (; m < M; ++m) {
            const float a = A[static_cast<std::int64_t>(m) * K + k];
            const float* __restrict__ brow = B + static_cast<std::int64_t>(m) * N;
#ifdef _OPENMP
#pragma omp simd
#endif
            for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// C[M x N] = A[M x K] * B[N x K]^T
inline void gemm_nt(const float* A, const float* B, float* C, int M, int K, int N,
                    bool accumulate = false) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int m = 0; m < M; ++m) {
        const float* __restrict__ arow = A + static_cast<std::int64_t>(m) * K;
        float* crow = C + static_cast<std::int64_t>(m) * N;
        int n = 0;
        for (; n + 4 <= N; n += 4) {
            const float* __restrict__ b0 = B + static_cast<std::int64_t>(n) * K;
            const float* __restrict__ b1 = b0 + K;
            const float* __restrict__ b2 = b1 + K;
            const float* __restrict__ b3 = b2 + K;
            float acc0 = 0.0f, acc1 = 0.0f, acc2 = 0.0f, acc3 = 0.0f;
#ifdef _OPENMP
#pragma omp simd reduction(+ : acc0, acc1, acc2, acc3)
#endif
            for (int k = 0; k < K; ++k) {
                const float a = arow[k];
                acc0 += a * b0[k];
                acc1 += a * b1[k];
                acc2 += a * b2[k];
                acc3 += a * b3[k];
            }
            if (accumulate) {
                crow[n] += acc0;
                crow[n + 1] += acc1;
                crow[n + 2] += acc2;
                crow[n + 3] += acc3;
            } else {
                crow[n] = acc0;
                crow[n + 1] = acc1;
                crow[n + 2] = acc2;
                crow[n + 3] = acc3;
            }
        }
        for (; n < N; ++n) {
            const float* __restrict__ brow = B + static_cast<std::int64_t>(n) * K;
            float acc = 0.0f;
#ifdef _OPENMP
#pragma omp simd reduction(+ : acc)
#endif
            for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
            crow[n] = accumulate ? crow[n] + acc : acc;
        }
    }
}

}  // namespace texseg
