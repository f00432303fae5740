// Times the serial reference permutation kernel against the OpenMP one and
// checks they produce identical output.
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "lmmdiag/diagnostics.hpp"
#include "lmmdiag/rng.hpp"

using namespace lmmdiag;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
         static_cast<double>(reps);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (OpenMP disabled)\n");
#endif
  std::printf("%8s %10s %12s %12s %8s %6s\n", "m", "perms", "serial_s", "parallel_s",
              "speedup", "match");
  Rng setup(1);
  for (int m : {10, 50, 200}) {
    NuVector nu;
    nu.nu = Vector(m);
    for (int i = 0; i < m; ++i) nu.nu[i] = setup.next_normal();
    nu.k = Vector::Ones(1);
    Vector eta(m);
    for (int i = 0; i < m; ++i) eta[i] = setup.next_normal();
    FactorCov g = FactorCov::diagonal(m);
    for (long perms : {100000L, 1000000L}) {
      std::vector<double> serial(perms), parallel(perms);
      double ts = time_of([&] { sample_permutation_values_serial(nu, eta, g, 7, serial); }, 3);
      double tp = time_of([&] { sample_permutation_values(nu, eta, g, 7, parallel); }, 3);
      std::printf("%8d %10ld %12.4f %12.4f %7.2fx %6s\n", m, perms, ts, tp, ts / tp,
                  serial == parallel ? "yes" : "NO");
    }
  }
  return 0;
}
