#include "lmpet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lmpet {

namespace {

int initial_workers() {
  if (const char* env = std::getenv("LMPET_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<int>& workers_ref() {
  static std::atomic<int> workers{initial_workers()};
  return workers;
}

}  // namespace

void set_worker_count(int workers) {
  if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
  workers_ref().store(workers);
}

int worker_count() { return workers_ref().load(); }

ChunkPlan plan_chunks(std::size_t n, std::size_t min_chunk, std::size_t max_chunks) {
  ChunkPlan plan;
  plan.n = n;
  if (n == 0) return plan;
  min_chunk = std::max<std::size_t>(min_chunk, 1);
  max_chunks = std::max<std::size_t>(max_chunks, 1);
  plan.chunk = std::max(min_chunk, (n + max_chunks - 1) / max_chunks);
  plan.count = (n + plan.chunk - 1) / plan.chunk;
  return plan;
}

void parallel_for_chunks(const ChunkPlan& plan,
                         const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  if (plan.count == 0) return;
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), plan.count);
  if (threads <= 1) {
    for (std::size_t c = 0; c < plan.count; ++c) body(c, plan.begin(c), plan.end(c));
    return;
  }
  std::vector<std::exception_ptr> errors(plan.count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < plan.count; c = next++) {
      try {
        body(c, plan.begin(c), plan.end(c));
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace lmpet
