#include "genadapt/kernels.hpp"

#include <atomic>
#include <cstring>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace genadapt::kernels {

namespace {
std::atomic<ExecMode> g_mode{ExecMode::parallel};
}

ExecMode exec_mode() { return g_mode.load(std::memory_order_relaxed); }

void set_exec_mode(ExecMode mode) { g_mode.store(mode, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

static inline void matmul_row(const double* a, const double* b, double* c,
                              std::size_t i, std::size_t k, std::size_t n) {
  double* crow = c + i * n;
  std::memset(crow, 0, n * sizeof(double));
  const double* arow = a + i * k;
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double aik = arow[kk];
    const double* brow = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
  }
}

void matmul_serial(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul_parallel(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i)
    matmul_row(a, b, c, static_cast<std::size_t>(i), k, n);
#else
  matmul_serial(a, b, c, m, k, n);
#endif
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
  // row-parallel pay-off threshold; tiny products stay serial
  if (exec_mode() == ExecMode::parallel && m * k * n >= 16384)
    matmul_parallel(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (exec_mode() == ExecMode::serial || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
#ifdef _OPENMP
  std::exception_ptr err;
  std::mutex err_mutex;
  std::atomic<bool> failed{false};
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (!err) err = std::current_exception();
      failed.store(true, std::memory_order_relaxed);
    }
  }
  if (err) std::rethrow_exception(err);
#else
  for (std::size_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace genadapt::kernels
