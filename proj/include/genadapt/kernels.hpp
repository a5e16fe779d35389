#pragma once

#include <cstddef>
#include <functional>

namespace genadapt::kernels {

// Runtime switch between the serial reference kernels and the OpenMP ones.
// Both paths compute each output element with the same per-element operation
// order, so results are bit-identical; the switch is a performance knob and
// the hook the tests use to compare implementations.
enum class ExecMode { serial, parallel };

ExecMode exec_mode();
void set_exec_mode(ExecMode mode);
int max_threads();
void set_num_threads(int n);  // n < 1 leaves the OpenMP default

// c[m x n] = a[m x k] * b[k x n], row-major, c overwritten
void matmul_serial(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);
void matmul_parallel(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n);

// Runs body(0..n-1); parallel when the mode allows it. body(i) must touch only
// its own slot i. Exceptions from any iteration are rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace genadapt::kernels
