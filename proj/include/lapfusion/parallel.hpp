#pragma once

#include <cstddef>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lapfusion {

/// How a data-parallel kernel runs. Serial is the reference path; Parallel
/// distributes independent iterations with OpenMP. Both write each output slot
/// from exactly one iteration, so results are identical. An exception thrown by
/// an iteration is rethrown on the calling thread once the loop has finished.
enum class Exec { Serial, Parallel };

/// Process-wide default used by the pipeline entry points.
Exec default_exec();
void set_default_exec(Exec exec);

/// Sets the OpenMP thread count (no-op without OpenMP). 0 keeps the runtime default.
void set_thread_count(int threads);
int thread_count();

template <typename Fn>
void parallel_for(std::ptrdiff_t n, Exec exec, Fn&& fn)
{
    if (exec == Exec::Parallel) {
        std::exception_ptr error;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
#pragma omp critical(lapfusion_parallel_error)
                if (!error) {
                    error = std::current_exception();
                }
            }
        }
        if (error) {
            std::rethrow_exception(error);
        }
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            fn(i);
        }
    }
}

/// Dynamic schedule for loops with uneven per-iteration cost (tree queries, fits).
template <typename Fn>
void parallel_for_dynamic(std::ptrdiff_t n, Exec exec, Fn&& fn)
{
    if (exec == Exec::Parallel) {
        std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 64)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
#pragma omp critical(lapfusion_parallel_error)
                if (!error) {
                    error = std::current_exception();
                }
            }
        }
        if (error) {
            std::rethrow_exception(error);
        }
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            fn(i);
        }
    }
}

} // namespace lapfusion
