#include "proker/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace proker {

namespace {
std::atomic<std::size_t> g_threads{0};
// Loops started from inside a worker run inline.
thread_local bool t_inside_worker = false;

struct WorkerScope {
  bool previous;
  WorkerScope() : previous(t_inside_worker) { t_inside_worker = true; }
  ~WorkerScope() { t_inside_worker = previous; }
};
}

void set_num_threads(std::size_t n) { g_threads.store(n); }

std::size_t num_threads() {
  std::size_t n = g_threads.load();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = t_inside_worker ? 1 : std::min(num_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto drain = [&] {
    WorkerScope scope;
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };

  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(drain);
  drain();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace proker
