#pragma once

// Trial loops. Every trial writes only its own slot and draws from its own
// counter stream, so the serial loop is the reference the OpenMP loop must
// match bit for bit.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <string_view>
#include <vector>

#include <omp.h>

namespace voltlab {

enum class Execution { Serial, Parallel };

inline std::string_view to_string(Execution e) { return e == Execution::Serial ? "serial" : "parallel"; }

template <typename Fn>
void for_each_trial(std::size_t n, Execution exec, Fn&& fn) {
    if (exec == Execution::Serial || n < 2) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    // Exceptions must not cross the parallel region; keep the one from the
    // lowest trial index so the error matches the serial loop.
    std::exception_ptr error;
    std::size_t error_index = n;
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(voltlab_trial_error)
            if (static_cast<std::size_t>(i) < error_index) {
                error_index = static_cast<std::size_t>(i);
                error = std::current_exception();
            }
        }
    }
    if (error)
        std::rethrow_exception(error);
}

/// Runs fn(i) -> T for every trial into slot i.
template <typename T, typename Fn>
std::vector<T> map_trials(std::size_t n, Execution exec, Fn&& fn) {
    std::vector<T> out(n);
    for_each_trial(n, exec, [&](std::size_t i) { out[i] = fn(i); });
    return out;
}

inline int worker_threads(Execution exec) { return exec == Execution::Serial ? 1 : omp_get_max_threads(); }

} // namespace voltlab
