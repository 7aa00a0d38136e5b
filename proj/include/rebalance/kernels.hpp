#pragma once

// Data-parallel kernels. Each parallel kernel has a serial reference with the
// same signature; both produce identical results because every replicate owns
// its RNG stream and reductions run serially in replicate order.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <type_traits>
#include <vector>

#include "rebalance/balance.hpp"

namespace rebalance::kernels {

/// Threads used by the parallel kernels. 0 restores the OpenMP default.
void set_threads(int threads);
int threads();

/// Thread count from $REBALANCE_THREADS, or 0 when unset or invalid.
int threads_from_env();

/// out[b] = f(b) for b in [0, count).
template <class F>
auto generate_serial(std::size_t count, F&& f) {
  using T = std::decay_t<decltype(f(std::size_t{0}))>;
  std::vector<T> out;
  out.reserve(count);
  for (std::size_t b = 0; b < count; ++b) out.push_back(f(b));
  return out;
}

/// Same as generate_serial, with replicates spread over OpenMP threads. The
/// first exception (lowest replicate index) is rethrown after the loop.
template <class F>
auto generate_parallel(std::size_t count, F&& f) {
  using T = std::decay_t<decltype(f(std::size_t{0}))>;
  std::vector<T> out(count);
  std::vector<std::exception_ptr> errors(count);
  const auto total = static_cast<std::int64_t>(count);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t b = 0; b < total; ++b) {
    try {
      out[static_cast<std::size_t>(b)] = f(static_cast<std::size_t>(b));
    } catch (...) {
      errors[static_cast<std::size_t>(b)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

/// Signed jump points theta_b of the exact confidence-interval construction.
/// `infinite_value` is used when draw b equals the observed assignment.
std::vector<double> jump_points_serial(std::span<const double> y, const Assignment& w_obs,
                                       std::span<const Assignment> draws, double infinite_value);
std::vector<double> jump_points(std::span<const double> y, const Assignment& w_obs,
                                std::span<const Assignment> draws, double infinite_value);

/// Count of draws with w_i == w_j for every i < j, row-major over the upper
/// triangle (pair (0,1), (0,2), ..., (1,2), ...).
std::vector<std::uint64_t> same_group_counts_serial(std::span<const Assignment> samples);
std::vector<std::uint64_t> same_group_counts(std::span<const Assignment> samples);

}  // namespace rebalance::kernels
