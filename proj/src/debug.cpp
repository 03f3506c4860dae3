#include <atomic>

#include "mvsurf/ops_elementwise.hpp"

namespace mvsurf {

namespace {
std::atomic<bool> g_debug_checks{false};
}

bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool on) { g_debug_checks.store(on, std::memory_order_relaxed); }

}  // namespace mvsurf
