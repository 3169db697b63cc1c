#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace latentdiff {

/// Runs are grouped into fixed-size chunks independent of the worker count, so
/// the order of floating-point merges (and hence every output bit) depends only
/// on the number of runs.
inline constexpr std::int64_t kRunChunk = 2048;

/// Deterministic parallel reduction over runs 1..n_runs (stream index == run index).
///
/// `body(run, acc)` folds one run into a chunk-local accumulator; chunk
/// accumulators are merged in chunk order with `Acc::merge`.
template <class Acc, class Body>
Acc parallel_runs(std::int64_t n_runs, int workers, Body&& body) {
    const std::int64_t n_chunks = (n_runs + kRunChunk - 1) / kRunChunk;
    std::vector<Acc> partial(static_cast<std::size_t>(std::max<std::int64_t>(n_chunks, 0)));

    std::atomic<std::int64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::int64_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                Acc local{};
                const std::int64_t first = c * kRunChunk + 1;
                const std::int64_t last = std::min(n_runs, first + kRunChunk - 1);
                for (std::int64_t run = first; run <= last; ++run) body(run, local);
                partial[static_cast<std::size_t>(c)] = std::move(local);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(n_chunks);
                return;
            }
        }
    };

    const int n_threads =
        static_cast<int>(std::clamp<std::int64_t>(workers, 1, std::max<std::int64_t>(n_chunks, 1)));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    Acc total{};
    for (const auto& p : partial) total.merge(p);
    return total;
}

/// Parallel loop over runs 1..n_runs for bodies that write into run-indexed storage.
template <class Body>
void parallel_for_runs(std::int64_t n_runs, int workers, Body&& body) {
    struct Nothing {
        void merge(const Nothing&) {}
    };
    parallel_runs<Nothing>(n_runs, workers, [&](std::int64_t run, Nothing&) { body(run); });
}

}  // namespace latentdiff
