#include "lapfusion/parallel.hpp"

#include <atomic>

namespace lapfusion {

namespace {
std::atomic<Exec> g_default_exec{Exec::Parallel};
}

Exec default_exec()
{
    return g_default_exec.load();
}

void set_default_exec(Exec exec)
{
    g_default_exec.store(exec);
}

void set_thread_count(int threads)
{
#ifdef _OPENMP
    if (threads > 0) {
        omp_set_num_threads(threads);
    }
#else
    (void)threads;
#endif
}

int thread_count()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace lapfusion
