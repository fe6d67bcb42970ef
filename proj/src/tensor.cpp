#include "nextscale/tensor.hpp"

#include <atomic>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace nextscale {

namespace {
std::atomic<bool> g_strict_checks{false};
thread_local bool g_grad_enabled = true;

// Training churns through large short-lived buffers; keeping them on the
// heap instead of per-allocation mmaps roughly halves the system time.
struct MallocTuning {
  MallocTuning() {
#ifdef __GLIBC__
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  }
};
const MallocTuning g_malloc_tuning;
}  // namespace

bool strict_checks_enabled() { return g_strict_checks.load(std::memory_order_relaxed); }
void set_strict_checks(bool on) { g_strict_checks.store(on, std::memory_order_relaxed); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace nextscale
