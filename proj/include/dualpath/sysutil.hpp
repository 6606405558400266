#pragma once

namespace dualpath::sys {

/// Moves the calling thread to the idle scheduling class so it only runs
/// when nothing else wants the CPU. Returns false where unsupported.
bool lower_current_thread_priority();

unsigned hardware_threads();

}  // namespace dualpath::sys
