#include <algorithm>
#include <vector>

#include "fprl/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define FPRL_HAVE_AVX2_KERNELS 1
#include <immintrin.h>
#define FPRL_AVX2 __attribute__((target("avx2")))
#else
#define FPRL_HAVE_AVX2_KERNELS 0
#endif

namespace fprl::kernels::avx2 {

#if FPRL_HAVE_AVX2_KERNELS

bool compiled() { return true; }

FPRL_AVX2 void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  std::fill(c, c + m * n, 0.0);
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const __m256d av = _mm256_set1_pd(aip);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j < n4; j += 4) {
        const __m256d cv = _mm256_loadu_pd(crow + j);
        const __m256d bv = _mm256_loadu_pd(brow + j);
        _mm256_storeu_pd(crow + j, _mm256_add_pd(cv, _mm256_mul_pd(av, bv)));
      }
      for (; j < n; ++j) crow[j] = crow[j] + aip * brow[j];
    }
  }
}

FPRL_AVX2 void scan_forward(const ScanArgs& s) {
  const std::size_t d = s.channels, r = s.state, plane = r * d;
  const std::size_t d4 = d & ~std::size_t{3};
  double* h = s.state_io;
  for (std::size_t t = 0; t < s.length; ++t) {
    const double* ab = s.a_bar + t * plane;
    const double* bb = s.b_bar + t * plane;
    const double* ct = s.c + t * r;
    const double* xt = s.x + t * d;
    double* yt = s.y + t * d;
    std::fill(yt, yt + d, 0.0);
    for (std::size_t q = 0; q < r; ++q) {
      const double cq = ct[q];
      const __m256d cv = _mm256_set1_pd(cq);
      double* hq = h + q * d;
      const double* abq = ab + q * d;
      const double* bbq = bb + q * d;
      std::size_t ch = 0;
      for (; ch < d4; ch += 4) {
        const __m256d hv = _mm256_loadu_pd(hq + ch);
        const __m256d nh = _mm256_add_pd(_mm256_mul_pd(_mm256_loadu_pd(abq + ch), hv),
                                         _mm256_mul_pd(_mm256_loadu_pd(bbq + ch), _mm256_loadu_pd(xt + ch)));
        _mm256_storeu_pd(hq + ch, nh);
        _mm256_storeu_pd(yt + ch, _mm256_add_pd(_mm256_loadu_pd(yt + ch), _mm256_mul_pd(cv, nh)));
      }
      for (; ch < d; ++ch) {
        hq[ch] = abq[ch] * hq[ch] + bbq[ch] * xt[ch];
        yt[ch] = yt[ch] + cq * hq[ch];
      }
    }
    if (s.h_trace) std::copy(h, h + plane, s.h_trace + t * plane);
  }
}

FPRL_AVX2 static double hsum(__m256d v) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, v);
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

FPRL_AVX2 void scan_backward(const ScanGradArgs& s) {
  const std::size_t d = s.channels, r = s.state, plane = r * d;
  const std::size_t d4 = d & ~std::size_t{3};
  std::vector<double> gh(plane, 0.0);
  std::vector<double> zeros(plane, 0.0);
  for (std::size_t t = s.length; t-- > 0;) {
    const double* ab = s.a_bar + t * plane;
    const double* bb = s.b_bar + t * plane;
    const double* ct = s.c + t * r;
    const double* xt = s.x + t * d;
    const double* gy = s.grad_y + t * d;
    const double* ht = s.h_trace + t * plane;
    const double* hprev = t > 0 ? s.h_trace + (t - 1) * plane : (s.h_init ? s.h_init : zeros.data());
    double* gab = s.grad_a_bar + t * plane;
    double* gbb = s.grad_b_bar + t * plane;
    double* gc = s.grad_c + t * r;
    double* gx = s.grad_x + t * d;
    std::fill(gx, gx + d, 0.0);
    for (std::size_t q = 0; q < r; ++q) {
      const double cq = ct[q];
      const __m256d cv = _mm256_set1_pd(cq);
      double* ghq = gh.data() + q * d;
      const double* htq = ht + q * d;
      __m256d accv = _mm256_setzero_pd();
      std::size_t ch = 0;
      for (; ch < d4; ch += 4) {
        const __m256d gyv = _mm256_loadu_pd(gy + ch);
        _mm256_storeu_pd(ghq + ch, _mm256_add_pd(_mm256_loadu_pd(ghq + ch), _mm256_mul_pd(cv, gyv)));
        accv = _mm256_add_pd(accv, _mm256_mul_pd(gyv, _mm256_loadu_pd(htq + ch)));
      }
      double acc = hsum(accv);
      for (; ch < d; ++ch) {
        ghq[ch] = ghq[ch] + cq * gy[ch];
        acc = acc + gy[ch] * htq[ch];
      }
      gc[q] = acc;

      const double* abq = ab + q * d;
      const double* bbq = bb + q * d;
      const double* hpq = hprev + q * d;
      double* gabq = gab + q * d;
      double* gbbq = gbb + q * d;
      for (ch = 0; ch < d4; ch += 4) {
        const __m256d g = _mm256_loadu_pd(ghq + ch);
        _mm256_storeu_pd(gabq + ch, _mm256_mul_pd(g, _mm256_loadu_pd(hpq + ch)));
        _mm256_storeu_pd(gbbq + ch, _mm256_mul_pd(g, _mm256_loadu_pd(xt + ch)));
        _mm256_storeu_pd(gx + ch, _mm256_add_pd(_mm256_loadu_pd(gx + ch), _mm256_mul_pd(g, _mm256_loadu_pd(bbq + ch))));
        _mm256_storeu_pd(ghq + ch, _mm256_mul_pd(g, _mm256_loadu_pd(abq + ch)));
      }
      for (; ch < d; ++ch) {
        gabq[ch] = ghq[ch] * hpq[ch];
        gbbq[ch] = ghq[ch] * xt[ch];
        gx[ch] = gx[ch] + ghq[ch] * bbq[ch];
        ghq[ch] = ghq[ch] * abq[ch];
      }
    }
  }
  if (s.grad_h_init) std::copy(gh.begin(), gh.end(), s.grad_h_init);
}

#else

bool compiled() { return false; }
void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  scalar::gemm(m, k, n, a, b, c);
}
void scan_forward(const ScanArgs& args) { scalar::scan_forward(args); }
void scan_backward(const ScanGradArgs& args) { scalar::scan_backward(args); }

#endif

}  // namespace fprl::kernels::avx2
