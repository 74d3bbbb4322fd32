#pragma once

// Inner-loop kernels with a scalar reference and SIMD variants.
//
// Every variant performs the same floating-point operations in the same
// order per output element, so gemm and scan_forward agree bitwise across
// variants. scan_backward reduces grad_c across channels in lanes and agrees
// to rounding only.

#include <cstddef>
#include <string_view>

namespace fprl::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

// One diagonal SSM recurrence over `length` steps.
// Layouts: a_bar, b_bar, h_trace are [length][state][channels]; c is
// [length][state]; x, y are [length][channels]; state_io is [state][channels].
struct ScanArgs {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  const double* a_bar = nullptr;
  const double* b_bar = nullptr;
  const double* c = nullptr;
  const double* x = nullptr;
  double* state_io = nullptr;  // initial state in, final state out
  double* h_trace = nullptr;   // optional
  double* y = nullptr;
};

// Adjoint of ScanArgs. Gradient outputs are overwritten.
struct ScanGradArgs {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  const double* a_bar = nullptr;
  const double* b_bar = nullptr;
  const double* c = nullptr;
  const double* x = nullptr;
  const double* h_trace = nullptr;  // required
  const double* h_init = nullptr;   // null means zero initial state
  const double* grad_y = nullptr;
  double* grad_a_bar = nullptr;
  double* grad_b_bar = nullptr;
  double* grad_c = nullptr;
  double* grad_x = nullptr;
  double* grad_h_init = nullptr;  // optional
};

struct KernelTable {
  Isa isa;
  // c[m x n] = a[m x k] * b[k x n]
  void (*gemm)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
  void (*scan_forward)(const ScanArgs& args);
  void (*scan_backward)(const ScanGradArgs& args);
};

bool isa_supported(Isa isa);
Isa best_isa();

const KernelTable& table(Isa isa);

// The table used by tensor operations. Defaults to best_isa(), overridable
// with FPRL_ISA=scalar|avx2 in the environment or select().
const KernelTable& active();
void select(Isa isa);

namespace scalar {
void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void scan_forward(const ScanArgs& args);
void scan_backward(const ScanGradArgs& args);
}  // namespace scalar

namespace avx2 {
bool compiled();
void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void scan_forward(const ScanArgs& args);
void scan_backward(const ScanGradArgs& args);
}  // namespace avx2

}  // namespace fprl::kernels
