#include "mobilex/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mobilex {

namespace {

int g_override = 0;

int default_threads() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("MOBILEX_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return n;
}

}  // namespace

int kernel_threads() {
    if (g_override > 0) return g_override;
    static const int n = default_threads();
    return n;
}

void set_kernel_threads(int n) { g_override = n > 0 ? n : 0; }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn) {
    const std::int64_t count = end - begin;
    if (count <= 0) return;
    const int threads = static_cast<int>(
        std::min<std::int64_t>(kernel_threads(), count));
    if (threads <= 1 || count < 64) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{begin};
    const std::int64_t chunk = std::max<std::int64_t>(1, count / (threads * 8));
    auto worker = [&] {
        for (;;) {
            std::int64_t lo = next.fetch_add(chunk);
            if (lo >= end) break;
            std::int64_t hi = std::min(lo + chunk, end);
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads) - 1);
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

}  // namespace mobilex
