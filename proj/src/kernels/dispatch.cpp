#include <atomic>
#include <cstdlib>
#include <string>

#include "fewshot/kernels.hpp"

namespace fewshot::kernels {
namespace {

const KernelTable* lookup(std::string_view name) {
  if (name == "scalar") return &scalar_table();
  if (name == "avx2") return avx2_table();
  if (name == "neon") return neon_table();
  return nullptr;
}

const KernelTable* detect() {
  if (const char* env = std::getenv("FEWSHOT_SIMD")) {
    if (const KernelTable* t = lookup(env)) return t;
  }
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& active() {
  return *current().load(std::memory_order_relaxed);
}

bool select(std::string_view name) {
  const KernelTable* t = lookup(name);
  if (t == nullptr) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

}  // namespace fewshot::kernels
