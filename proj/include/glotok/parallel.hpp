#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace glotok {

namespace detail {
inline std::atomic<std::size_t>& thread_cap() {
    static std::atomic<std::size_t> cap{[] {
        std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("GLOTOK_THREADS")) {
            try {
                const long v = std::stol(env);
                if (v >= 1) n = static_cast<std::size_t>(v);
            } catch (const std::exception&) {
            }
        }
        return n;
    }()};
    return cap;
}
} // namespace detail

// Upper bound on worker threads; GLOTOK_THREADS sets the initial value.
inline std::size_t thread_count() { return detail::thread_cap().load(); }
inline void set_thread_count(std::size_t n) { detail::thread_cap().store(std::max<std::size_t>(1, n)); }

// Runs fn(i) for i in [0, n) over contiguous chunks. Callers write disjoint
// outputs per i, so results never depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t * n / workers; i < (t + 1) * n / workers; ++i) fn(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace glotok
