#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "kdi/dissect.hpp"

namespace kdi {

// Strided fan-out of n independent tasks over the shared worker-count hint
// (KD_DISSECT_THREADS, default hardware concurrency). The first exception
// stops its worker and is rethrown after all workers join.
inline void parallel_tasks(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(n, std::size_t(dissect_thread_count()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first;
    std::mutex mu;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first) first = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

}  // namespace kdi
