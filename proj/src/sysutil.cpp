#include "dualpath/sysutil.hpp"

#include <thread>

#if defined(__linux__)
#include <sched.h>
#endif

namespace dualpath::sys {

bool lower_current_thread_priority() {
#if defined(__linux__)
  sched_param param{};
  param.sched_priority = 0;
  // With pid 0 this applies to the calling thread only.
  return sched_setscheduler(0, SCHED_IDLE, &param) == 0;
#else
  return false;
#endif
}

unsigned hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

}  // namespace dualpath::sys
