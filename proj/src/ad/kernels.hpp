#pragma once

#include <cstddef>
#include <vector>

// Dense inner loops shared by the ops. Every reduction runs in a fixed order,
// so results are bit-reproducible for a given build.
namespace uniclin::ad::kernels {

inline float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) +
         tail;
}

inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[m×n] += A·B[p×n] where A(i, k) = a[i·rs + k·ks]. Every C entry sums
// its p products in ascending k, whatever the blocking, so a row's result
// does not depend on the other rows.
inline void gemm_strided(const float* a, std::size_t rs, std::size_t ks, const float* b, float* c,
                         std::size_t m, std::size_t p, std::size_t n) {
  constexpr std::size_t R = 4, W = 64;
  std::size_t i = 0;
  for (; i + R <= m; i += R) {
    std::size_t j = 0;
    for (; j + W <= n; j += W) {
      float acc[R][W];
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t l = 0; l < W; ++l) acc[r][l] = c[(i + r) * n + j + l];
      }
      for (std::size_t k = 0; k < p; ++k) {
        const float* bk = b + k * n + j;
        for (std::size_t r = 0; r < R; ++r) {
          const float ar = a[(i + r) * rs + k * ks];
          for (std::size_t l = 0; l < W; ++l) acc[r][l] += ar * bk[l];
        }
      }
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t l = 0; l < W; ++l) c[(i + r) * n + j + l] = acc[r][l];
      }
    }
    if (j < n) {
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t k = 0; k < p; ++k) {
          axpy(a[(i + r) * rs + k * ks], b + k * n + j, c + (i + r) * n + j, n - j);
        }
      }
    }
  }
  for (; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) axpy(a[i * rs + k * ks], b + k * n, c + i * n, n);
  }
}

// C[m×n] += A[m×p]·B[p×n]
inline void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t p,
                    std::size_t n) {
  gemm_strided(a, p, 1, b, c, m, p, n);
}

// C[m×n] += A[m×p]·B[n×p]ᵀ, through a transposed copy of B.
inline void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t p,
                    std::size_t n) {
  thread_local std::vector<float> bt;
  bt.resize(p * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < p; ++k) bt[k * n + j] = b[j * p + k];
  gemm_nn(a, bt.data(), c, m, p, n);
}

// C[m×n] += A[r×m]ᵀ·B[r×n]
inline void gemm_tn(const float* a, const float* b, float* c, std::size_t r, std::size_t m,
                    std::size_t n) {
  gemm_strided(a, 1, m, b, c, m, r, n);
}

}  // namespace uniclin::ad::kernels
