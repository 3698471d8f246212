#include "neuron_lab/parallel.hpp"

namespace neuron_lab {

namespace {
std::atomic<unsigned> g_workers{0};
thread_local bool t_in_region = false;
}  // namespace

unsigned default_workers() {
    const unsigned n = g_workers.load();
    if (n != 0) return n;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void set_default_workers(unsigned n) { g_workers.store(n); }

bool in_parallel_region() { return t_in_region; }

namespace detail {
void set_in_parallel_region(bool on) { t_in_region = on; }
}  // namespace detail

}  // namespace neuron_lab
