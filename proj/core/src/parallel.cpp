#include "progspace/parallel.hpp"

namespace progspace {

namespace {
std::atomic<unsigned> configured_threads{0};
}

void set_thread_count(unsigned n) { configured_threads.store(n); }

unsigned thread_count() {
  const unsigned n = configured_threads.load();
  if (n != 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace progspace
