#include "core/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace pxs {

namespace {
int g_threads = []() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}();

constexpr std::size_t kMaxBlocks = 16;
constexpr std::size_t kSerialCutoff = 4096;
}  // namespace

void set_num_threads(int n) { g_threads = std::max(1, n); }

int num_threads() { return g_threads; }

std::size_t parallel_block_count(std::size_t n) {
  if (n <= kSerialCutoff) return 1;
  return std::min(kMaxBlocks, (n + kSerialCutoff - 1) / kSerialCutoff);
}

void parallel_for_blocks(std::size_t count, const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  const int workers = static_cast<int>(std::min<std::size_t>(g_threads, count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) break;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 0; i < workers - 1; ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t blocks = parallel_block_count(n);
  const int workers = std::min<std::size_t>(g_threads, blocks);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  // Block boundaries are a function of n alone; workers pull blocks off a
  // shared counter, each block handled by exactly one worker.
  std::atomic<std::size_t> next{0};
  auto run = [&]() {
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= blocks) break;
      std::size_t begin = b * n / blocks;
      std::size_t end = (b + 1) * n / blocks;
      if (begin < end) body(begin, end);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 0; i < workers - 1; ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

}  // namespace pxs
