#include "mvldp/parallel.hpp"

#include <exception>
#include <thread>
#include <vector>

#include "mvldp/errors.hpp"

namespace mvldp {

Executor::Executor(std::size_t threads) : threads_(threads) {
  if (threads_ == 0) throw ParameterError("thread count must be positive");
}

const Executor& Executor::serial() {
  static const Executor s(1);
  return s;
}

void Executor::parallel_for(std::size_t n,
                            const std::function<void(std::size_t, std::size_t)>& body) const {
  if (n == 0) return;
  const std::size_t workers = threads_ < n ? threads_ : n;
  if (workers == 1) {
    body(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
      const std::size_t b = w * chunk;
      const std::size_t e = b + chunk < n ? b + chunk : n;
      if (b >= e) continue;
      pool.emplace_back([&, w, b, e] {
        try {
          body(b, e);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    try {
      body(0, chunk < n ? chunk : n);
    } catch (...) {
      errors[0] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mvldp
