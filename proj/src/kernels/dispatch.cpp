#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "fsre/kernels.hpp"

namespace fsre::kernels {
namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("FSRE_KERNELS")) {
    const std::string_view want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2") {
      if (const auto* t = avx2_table()) return t;
      throw std::runtime_error("FSRE_KERNELS=avx2 requested but AVX2/FMA is unavailable");
    }
    throw std::runtime_error("FSRE_KERNELS must be 'scalar' or 'avx2', got '" + std::string(want) + "'");
  }
  if (const auto* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

bool isa_supported(Isa isa) { return isa == Isa::scalar || avx2_table() != nullptr; }

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

Isa active_isa() { return active().isa; }

void force_isa(Isa isa) {
  if (isa == Isa::scalar) {
    slot().store(&scalar_table());
    return;
  }
  const auto* t = avx2_table();
  if (t == nullptr) throw std::invalid_argument("AVX2/FMA kernels are not available on this machine");
  slot().store(t);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace fsre::kernels
