#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ustab {

// Runs fn(i) for i in [0, n). Each index writes only its own slot, so results
// do not depend on the worker count. The first exception (lowest index) is rethrown.
template <class Fn>
void parallel_for(long n, int workers, Fn&& fn) {
    if (n <= 0) return;
    const long nw = std::clamp<long>(workers, 1, n);
    if (nw == 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::mutex mu;
    long err_index = n;
    std::exception_ptr err;
    auto body = [&] {
        for (;;) {
            long i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (i < err_index) {
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (long t = 0; t < nw; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

} // namespace ustab
