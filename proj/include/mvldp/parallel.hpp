#pragma once

#include <cstddef>
#include <functional>

namespace mvldp {

/// Fixed-size worker set. parallel_for splits [0, n) into `threads()`
/// contiguous chunks; chunk boundaries depend only on n and the thread count,
/// and callers reduce per-item results in index order, so output never
/// depends on scheduling.
class Executor {
 public:
  explicit Executor(std::size_t threads = 1);

  std::size_t threads() const noexcept { return threads_; }

  /// Calls body(begin, end) on disjoint chunks covering [0, n). The first
  /// exception (lowest chunk) is rethrown after all chunks finish.
  void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) const;

  static const Executor& serial();

 private:
  std::size_t threads_;
};

}  // namespace mvldp
