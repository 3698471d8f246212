#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace neuron_lab {

// Worker count used when a caller does not pass one. Defaults to the number
// of logical cores.
unsigned default_workers();
void set_default_workers(unsigned n);

// True inside a parallel_for worker; nested calls then run inline so the
// total thread count stays bounded.
bool in_parallel_region();

namespace detail {
void set_in_parallel_region(bool on);
}

// Runs f(i) for i in [0, n). Results must be written to per-index slots; the
// caller combines them in index order, which keeps reductions deterministic.
template <class F>
void parallel_for(std::size_t n, F&& f, unsigned workers = 0) {
    if (workers == 0) workers = default_workers();
    if (workers <= 1 || n <= 1 || in_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    const unsigned count = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(count);
    for (unsigned t = 0; t < count; ++t) {
        pool.emplace_back([&] {
            detail::set_in_parallel_region(true);
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    next.store(n);
                }
            }
            detail::set_in_parallel_region(false);
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace neuron_lab
