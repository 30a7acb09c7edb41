#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace splatlab {

// Process-wide default worker count. 0 = hardware concurrency.
inline std::atomic<int>& default_thread_count() {
    static std::atomic<int> count{0};
    return count;
}

inline int resolve_threads(int requested) {
    int n = requested > 0 ? requested : default_thread_count().load();
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    return n > 0 ? n : 1;
}

// Runs fn(i) for i in [0, n). Work items must write to disjoint or
// per-item state; renders and backward passes rely on that to stay
// bit-reproducible for any worker count.
template <typename F>
void parallel_for(std::size_t n, F&& fn, int threads = 0) {
    if (n == 0) return;
    int workers = resolve_threads(threads);
    if (workers > static_cast<int>(n)) workers = static_cast<int>(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load(std::memory_order_relaxed)) return;
            try {
                fn(i);
            } catch (...) {
                failed.store(true, std::memory_order_relaxed);
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

} // namespace splatlab
