// FFTW planning and plan destruction are not thread-safe; execution is.
#pragma once

#include <mutex>

namespace mrsv::detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace mrsv::detail
