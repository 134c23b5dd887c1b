#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace uvga {

// Runs fn(i) for i in [0, n). Each index must write only its own slots;
// callers needing reductions merge per-index buffers in index order
// afterwards, so results do not depend on the thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    int hw = int(std::thread::hardware_concurrency());
    int workers = std::max(1, std::min(hw, n));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace uvga
