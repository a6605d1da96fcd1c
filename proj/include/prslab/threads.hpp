#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace prslab {

namespace detail {
inline std::atomic<int>& thread_count() {
    static std::atomic<int> n{1};
    return n;
}
}  // namespace detail

inline void set_num_threads(int n) { detail::thread_count() = std::max(1, n); }
inline int num_threads() { return detail::thread_count(); }

// Run fn(start, count) over [0, total) split into chunks, possibly across
// threads. Chunk boundaries are independent of the thread count, and every
// chunk writes only to its own output slots, so results are identical for
// any thread count.
inline void parallel_chunks(int total, int chunk,
                            const std::function<void(int, int)>& fn) {
    std::vector<std::pair<int, int>> ranges;
    for (int start = 0; start < total; start += chunk)
        ranges.emplace_back(start, std::min(chunk, total - start));
    int threads = std::min<int>(num_threads(), static_cast<int>(ranges.size()));
    if (threads <= 1) {
        for (auto [s, c] : ranges) fn(s, c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= ranges.size()) return;
                fn(ranges[i].first, ranges[i].second);
            }
        });
    for (auto& th : pool) th.join();
}

}  // namespace prslab
