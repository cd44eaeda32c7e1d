#include "aepm/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace aepm {

int max_threads() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("AEPM_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0 && cap < hw) return cap;
    }
    return hw;
}

void parallel_for(int64_t count, const std::function<void(int64_t)>& fn) {
    if (count <= 0) return;
    int threads = max_threads();
    if (threads <= 1 || count == 1) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    if (static_cast<int64_t>(threads) > count) threads = static_cast<int>(count);
    std::atomic<int64_t> next{0};
    const int64_t chunk = 8;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                int64_t begin = next.fetch_add(chunk);
                if (begin >= count || failed.load()) return;
                int64_t end = std::min(begin + chunk, count);
                for (int64_t i = begin; i < end; ++i) {
                    try {
                        fn(i);
                    } catch (...) {
                        if (!failed.exchange(true)) error = std::current_exception();
                        return;
                    }
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failed.load() && error) std::rethrow_exception(error);
}

} // namespace aepm
