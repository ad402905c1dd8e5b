#include "dpcl/common.hpp"

#include <atomic>

namespace dpcl {

namespace {
std::atomic<bool> g_warnings{true};
}

void warn(const std::string& msg) {
  if (g_warnings.load()) std::cerr << "[dpcl] warning: " << msg << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

}  // namespace dpcl
