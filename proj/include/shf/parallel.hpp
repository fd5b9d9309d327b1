#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace shf {

struct ParallelOptions {
    unsigned workers = 1;
    std::size_t batch_size = 4096;
};

// Runs fn(batch) for every batch index and returns the results in batch
// order.  The partition into batches does not depend on the worker count,
// so merging the returned vector front to back gives identical statistics
// for any number of workers.
template <class Fn>
auto run_batches(std::size_t n_batches, unsigned workers, Fn&& fn)
    -> std::vector<decltype(fn(std::size_t{}))> {
    using R = decltype(fn(std::size_t{}));
    std::vector<R> out(n_batches);
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(
                                                           std::max<std::size_t>(n_batches, 1))));
    if (workers == 1) {
        for (std::size_t b = 0; b < n_batches; ++b) out[b] = fn(b);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto work = [&] {
        for (;;) {
            std::size_t b = next.fetch_add(1);
            if (b >= n_batches) return;
            try {
                out[b] = fn(b);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!err) err = std::current_exception();
                next.store(n_batches);
                return;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (err) std::rethrow_exception(err);
    return out;
}

inline std::size_t batch_count(std::size_t samples, std::size_t batch_size) {
    return (samples + batch_size - 1) / batch_size;
}

inline std::size_t batch_length(std::size_t samples, std::size_t batch_size, std::size_t b) {
    std::size_t lo = b * batch_size;
    return std::min(batch_size, samples - lo);
}

} // namespace shf
