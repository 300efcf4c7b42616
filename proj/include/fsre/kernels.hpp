#pragma once

// Double-precision inner-loop kernels.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2/FMA variant. The variant is chosen once at first use from the CPU
// feature bits; FSRE_KERNELS=scalar|avx2 in the environment overrides the
// choice, and force_isa() overrides it programmatically (tests use this to
// compare the two paths).

#include <cstddef>
#include <span>
#include <string_view>

namespace fsre::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x[i] *= a
  void (*scale)(double a, double* x, std::size_t n);
  // out[j] = sum_i x[i] * m[i * cols + j], m is rows x cols row-major
  void (*vecmat)(const double* x, const double* m, std::size_t rows, std::size_t cols, double* out);
  // c += a * b with a m x k, b k x n, c m x n, all row-major
  void (*gemm_acc)(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
};

const KernelTable& scalar_table();
// Null when the build or the CPU lacks the instruction set.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);
const KernelTable& active();
Isa active_isa();
// Throws std::invalid_argument when the requested ISA is unavailable.
void force_isa(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}

inline void scale(double a, std::span<double> x) { active().scale(a, x.data(), x.size()); }

}  // namespace fsre::kernels
