#pragma once
#include <mutex>

namespace dflow {

// FFTW planning (and plan destruction) is not thread-safe; executing existing
// plans is.  Every module that builds plans inside a parallel region locks
// this mutex around the planner calls.
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace dflow
