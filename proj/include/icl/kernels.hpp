#pragma once

// Raw dense kernels shared by the autodiff graph and the linear-algebra helpers.
// Every reduction runs in a fixed ascending order so results are reproducible
// and independent of how the output is tiled: with FMA hardware each output
// element is a single fma chain over the reduction index, both in the vector
// tiles and in the scalar edge paths.

#include <cmath>
#include <cstddef>
#include <cstring>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define ICL_KERNELS_AVX2 1
#else
#define ICL_KERNELS_AVX2 0
#endif

namespace icl::kernels {

using std::size_t;

#if ICL_KERNELS_AVX2

namespace detail {

// c[i,j] = fma-chain over p of a[i,p] * b[p,j]; identical rounding to the lane
// computation in the 4x8 tile below.
inline double dot_fma_strided(const double* a, const double* b, size_t k, size_t bstride) {
  double acc = 0.0;
  for (size_t p = 0; p < k; ++p) acc = std::fma(a[p], b[p * bstride], acc);
  return acc;
}

}  // namespace detail

// C(mxn) = A(mxk) * B(kxn)
inline void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      const double* bp = b + j;
      for (size_t p = 0; p < k; ++p, bp += n) {
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av;
        av = _mm256_set1_pd(a0[p]);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_set1_pd(a1[p]);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_set1_pd(a2[p]);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_set1_pd(a3[p]);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      _mm256_storeu_pd(c + (i + 0) * n + j, c00);
      _mm256_storeu_pd(c + (i + 0) * n + j + 4, c01);
      _mm256_storeu_pd(c + (i + 1) * n + j, c10);
      _mm256_storeu_pd(c + (i + 1) * n + j + 4, c11);
      _mm256_storeu_pd(c + (i + 2) * n + j, c20);
      _mm256_storeu_pd(c + (i + 2) * n + j + 4, c21);
      _mm256_storeu_pd(c + (i + 3) * n + j, c30);
      _mm256_storeu_pd(c + (i + 3) * n + j + 4, c31);
    }
    for (; j < n; ++j) {
      c[(i + 0) * n + j] = detail::dot_fma_strided(a0, b + j, k, n);
      c[(i + 1) * n + j] = detail::dot_fma_strided(a1, b + j, k, n);
      c[(i + 2) * n + j] = detail::dot_fma_strided(a2, b + j, k, n);
      c[(i + 3) * n + j] = detail::dot_fma_strided(a3, b + j, k, n);
    }
  }
  for (; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      c[i * n + j] = detail::dot_fma_strided(a + i * k, b + j, k, n);
    }
  }
}

// C(mxn) = A(mxk) * B(nxk)^T
inline void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (size_t j = 0; j < n; ++j) {
      c[i * n + j] = detail::dot_fma_strided(arow, b + j * k, k, 1);
    }
  }
}

// C(kxn) = A(mxk)^T * B(mxn); reduction runs over rows of A/B in ascending order.
inline void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  std::memset(c, 0, k * n * sizeof(double));
  for (size_t r = 0; r < m; ++r) {
    const double* arow = a + r * k;
    const double* brow = b + r * n;
    for (size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(arow[p]);
      double* crow = c + p * n;
      size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
      }
      for (; j < n; ++j) crow[j] = std::fma(arow[p], brow[j], crow[j]);
    }
  }
}

#else  // portable fallback: plain mul-add, fixed ascending reduction order

inline void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

inline void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

inline void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  std::memset(c, 0, k * n * sizeof(double));
  for (size_t r = 0; r < m; ++r) {
    for (size_t p = 0; p < k; ++p) {
      const double arp = a[r * k + p];
      for (size_t j = 0; j < n; ++j) c[p * n + j] += arp * b[r * n + j];
    }
  }
}

#endif  // ICL_KERNELS_AVX2

// float paths take the simple route; f32 is the "fast and loose" mode.
inline void mm_nn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    std::memset(crow, 0, n * sizeof(float));
    for (size_t p = 0; p < k; ++p) {
      const float aip = a[i * k + p];
      const float* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

inline void mm_nt(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

inline void mm_tn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  std::memset(c, 0, k * n * sizeof(float));
  for (size_t r = 0; r < m; ++r) {
    for (size_t p = 0; p < k; ++p) {
      const float arp = a[r * k + p];
      for (size_t j = 0; j < n; ++j) c[p * n + j] += arp * b[r * n + j];
    }
  }
}

}  // namespace icl::kernels
