#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sdjr {

struct Execution {
    unsigned workers = 1;

    static Execution hardware() {
        return Execution{std::max(1u, std::thread::hardware_concurrency())};
    }
};

/// Runs fn(i) for i in [0, n) over a static partition. Callers write results
/// into slot i and reduce afterwards in index order, so the outcome never
/// depends on the worker count. The first exception thrown by any task is
/// rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, const Execution& exec, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(std::max(1u, exec.workers), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            const std::size_t begin = n * w / workers;
            const std::size_t end = n * (w + 1) / workers;
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace sdjr
