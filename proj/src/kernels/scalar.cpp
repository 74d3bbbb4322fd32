#include <algorithm>
#include <vector>

#include "fprl/kernels.hpp"

namespace fprl::kernels::scalar {

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + aip * brow[j];
    }
  }
}

void scan_forward(const ScanArgs& s) {
  const std::size_t d = s.channels, r = s.state, plane = r * d;
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
      double* hq = h + q * d;
      const double* abq = ab + q * d;
      const double* bbq = bb + q * d;
      for (std::size_t ch = 0; ch < d; ++ch) {
        hq[ch] = abq[ch] * hq[ch] + bbq[ch] * xt[ch];
        yt[ch] = yt[ch] + cq * hq[ch];
      }
    }
    if (s.h_trace) std::copy(h, h + plane, s.h_trace + t * plane);
  }
}

void scan_backward(const ScanGradArgs& s) {
  const std::size_t d = s.channels, r = s.state, plane = r * d;
  std::vector<double> gh(plane, 0.0);
  for (std::size_t t = s.length; t-- > 0;) {
    const double* ab = s.a_bar + t * plane;
    const double* bb = s.b_bar + t * plane;
    const double* ct = s.c + t * r;
    const double* xt = s.x + t * d;
    const double* gy = s.grad_y + t * d;
    const double* ht = s.h_trace + t * plane;
    const double* hprev = t > 0 ? s.h_trace + (t - 1) * plane : s.h_init;
    double* gab = s.grad_a_bar + t * plane;
    double* gbb = s.grad_b_bar + t * plane;
    double* gc = s.grad_c + t * r;
    double* gx = s.grad_x + t * d;
    std::fill(gx, gx + d, 0.0);
    for (std::size_t q = 0; q < r; ++q) {
      const double cq = ct[q];
      double* ghq = gh.data() + q * d;
      const double* htq = ht + q * d;
      double acc = 0.0;
      for (std::size_t ch = 0; ch < d; ++ch) {
        ghq[ch] = ghq[ch] + cq * gy[ch];
        acc = acc + gy[ch] * htq[ch];
      }
      gc[q] = acc;
      const double* abq = ab + q * d;
      const double* bbq = bb + q * d;
      for (std::size_t ch = 0; ch < d; ++ch) {
        const double hp = hprev ? hprev[q * d + ch] : 0.0;
        gab[q * d + ch] = ghq[ch] * hp;
        gbb[q * d + ch] = ghq[ch] * xt[ch];
        gx[ch] = gx[ch] + ghq[ch] * bbq[ch];
        ghq[ch] = ghq[ch] * abq[ch];
      }
    }
  }
  if (s.grad_h_init) std::copy(gh.begin(), gh.end(), s.grad_h_init);
}

}  // namespace fprl::kernels::scalar
