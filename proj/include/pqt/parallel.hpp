#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace pqt {

inline int default_thread_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end, chunk_index) over [0, n) split into fixed-size chunks.
//
// The chunk layout depends only on (n, chunk_size), never on the number of
// worker threads, so callers that accumulate per-chunk results and combine
// them in chunk order get bit-identical output whether this runs on one
// thread or many.
inline void parallel_chunks(size_t n, size_t chunk_size, int threads,
                            const std::function<void(size_t, size_t, size_t)>& fn) {
    if (n == 0) return;
    if (chunk_size == 0) chunk_size = 1;
    const size_t n_chunks = (n + chunk_size - 1) / chunk_size;
    const size_t n_workers =
        std::min<size_t>(threads <= 1 ? 1 : static_cast<size_t>(threads), n_chunks);

    if (n_workers <= 1) {
        for (size_t c = 0; c < n_chunks; ++c)
            fn(c * chunk_size, std::min(n, (c + 1) * chunk_size), c);
        return;
    }

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            fn(c * chunk_size, std::min(n, (c + 1) * chunk_size), c);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(n_workers - 1);
    for (size_t t = 1; t < n_workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

} // namespace pqt
