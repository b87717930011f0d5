#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mfne {

/// Worker count: MFNE_WORKERS if set and positive, otherwise the hardware count.
inline unsigned worker_count_from_env() {
    if (const char* env = std::getenv("MFNE_WORKERS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Static-partition parallel loop over [0, count). `body(begin, end)` must only
/// write to slots owned by its index range; results are then independent of
/// the worker count. The first exception thrown by any chunk is re-raised.
template <class Body>
void parallel_for(std::size_t count, unsigned workers, Body&& body) {
    if (count == 0) return;
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), count));
    if (workers == 1) {
        body(std::size_t{0}, count);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    const std::size_t chunk = (count + workers - 1) / workers;
    auto run = [&](unsigned w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(count, b + chunk);
        if (b >= e) return;
        try {
            body(b, e);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    for (unsigned w = 1; w < workers; ++w) threads.emplace_back(run, w);
    run(0);
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace mfne
