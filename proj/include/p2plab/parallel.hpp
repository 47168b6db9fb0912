#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace p2plab {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::max(1u, std::min(hw, 8u)));
}

// Runs fn(i) for i in [0, n) on a bounded pool with contiguous slices.
// Callers own any determinism concerns: results must go into per-index slots.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    threads = std::min(resolve_threads(threads), std::max(1, n));
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const int begin = static_cast<int>(static_cast<int64_t>(n) * t / threads);
        const int end = static_cast<int>(static_cast<int64_t>(n) * (t + 1) / threads);
        pool.emplace_back([begin, end, &fn] {
            for (int i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace p2plab
