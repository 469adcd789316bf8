#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace fedscope {

// Runs fn(i) for i in [0, n) split into contiguous chunks, one per thread.
// Each index is processed by exactly one thread and writes only to its own
// output slot, so results are independent of the thread count. num_threads
// <= 1 runs inline.
inline void parallel_for(int n, int num_threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int k = std::min(n, std::max(1, num_threads));
    if (k == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(k);
    int chunk = (n + k - 1) / k;
    for (int t = 0; t < k; ++t) {
        int lo = t * chunk;
        int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace fedscope
