#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace smir {

// Worker cap: SMIR_THREADS env var if set, else hardware concurrency.
// Read every call so tests and long-running tools can adjust it.
inline int max_threads() {
    if (const char* env = std::getenv("SMIR_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) {
            return n;
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n). Each worker owns a contiguous index range, so
// callers that write to disjoint per-index slots get results independent of
// the worker count. `grain` is the minimum work per thread before splitting.
template <typename Fn>
void parallel_for(std::size_t n, const Fn& fn, std::size_t grain = 1) {
    if (n == 0) {
        return;
    }
    const std::size_t want = (n + grain - 1) / std::max<std::size_t>(grain, 1);
    const std::size_t workers =
        std::min<std::size_t>({n, want, static_cast<std::size_t>(max_threads())});
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::exception_ptr error;
    std::atomic_flag error_set = ATOMIC_FLAG_INIT;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) {
            break;
        }
        pool.emplace_back([lo, hi, &fn, &error, &error_set] {
            try {
                for (std::size_t i = lo; i < hi; ++i) {
                    fn(i);
                }
            } catch (...) {
                if (!error_set.test_and_set()) {
                    error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace smir
