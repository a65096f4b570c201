#include "styleadv/runtime.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>

namespace styleadv::runtime {
namespace {

std::atomic<bool> g_strict{true};
std::atomic<int> g_threads{0};

// Fixed chunk count used for cross-item reductions in strict mode.
constexpr int kStrictChunks = 8;

}  // namespace

void set_strict_determinism(bool on) { g_strict = on; }
bool strict_determinism() { return g_strict; }

void set_num_threads(int n) {
  g_threads = n;
  if (n > 0) omp_set_num_threads(n);
}

int num_threads() {
  const int n = g_threads;
  return n > 0 ? n : omp_get_max_threads();
}

int reduction_chunks(long items) {
  if (items <= 1) return 1;
  const int want = g_strict ? kStrictChunks : num_threads();
  return static_cast<int>(std::min<long>(items, std::max(1, want)));
}

}  // namespace styleadv::runtime
