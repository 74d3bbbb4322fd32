#include <atomic>
#include <cstdlib>
#include <string>

#include "fprl/error.hpp"
#include "fprl/kernels.hpp"

namespace fprl::kernels {

namespace {

constexpr KernelTable kScalar{Isa::scalar, &scalar::gemm, &scalar::scan_forward, &scalar::scan_backward};
constexpr KernelTable kAvx2{Isa::avx2, &avx2::gemm, &avx2::scan_forward, &avx2::scan_backward};

Isa initial_isa() {
  if (const char* env = std::getenv("FPRL_ISA")) {
    const std::string v = env;
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return best_isa();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(initial_isa())};
  return ptr;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return avx2::compiled() && __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa best_isa() { return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

const KernelTable& table(Isa isa) { return isa == Isa::avx2 ? kAvx2 : kScalar; }

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) {
  if (!isa_supported(isa)) throw ConfigError("kernel set '" + std::string(isa_name(isa)) + "' not supported here");
  current().store(&table(isa), std::memory_order_release);
}

}  // namespace fprl::kernels
