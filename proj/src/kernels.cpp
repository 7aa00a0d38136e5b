#include "rebalance/kernels.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace rebalance::kernels {

namespace {
int default_threads = 0;
}

void set_threads(int threads) {
  if (threads <= 0) {
    if (default_threads == 0) default_threads = omp_get_num_procs();
    omp_set_num_threads(default_threads);
  } else {
    omp_set_num_threads(threads);
  }
}

int threads() { return omp_get_max_threads(); }

int threads_from_env() {
  const char* v = std::getenv("REBALANCE_THREADS");
  if (v == nullptr) return 0;
  try {
    const int t = std::stoi(v);
    return t > 0 ? t : 0;
  } catch (...) {
    return 0;
  }
}

namespace {

double jump_point(std::span<const double> y, const Assignment& w_obs, const Assignment& draw,
                  double infinite_value) {
  double numerator = 0.0;
  std::size_t moved = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool obs = w_obs.treated(i);
    const bool b = draw.treated(i);
    if (obs && !b) {
      numerator += y[i];
      ++moved;
    } else if (!obs && b) {
      numerator -= y[i];
    }
  }
  return moved == 0 ? infinite_value : numerator / static_cast<double>(moved);
}

void check_draws(std::span<const double> y, const Assignment& w_obs,
                 std::span<const Assignment> draws) {
  if (w_obs.n() != y.size()) throw DimensionMismatch("outcomes and assignment lengths differ");
  for (const auto& d : draws) {
    if (d.n() != y.size()) throw DimensionMismatch("resampled assignment has the wrong length");
    if (d.n_treated() != w_obs.n_treated()) {
      throw DimensionMismatch("resampled assignment has a different treated count");
    }
  }
}

void check_samples(std::span<const Assignment> samples) {
  if (samples.empty()) throw EmptyInput("no assignments supplied");
  for (const auto& s : samples) {
    if (s.n() != samples.front().n()) throw DimensionMismatch("assignments differ in length");
  }
}

}  // namespace

std::vector<double> jump_points_serial(std::span<const double> y, const Assignment& w_obs,
                                       std::span<const Assignment> draws, double infinite_value) {
  check_draws(y, w_obs, draws);
  return generate_serial(draws.size(), [&](std::size_t b) {
    return jump_point(y, w_obs, draws[b], infinite_value);
  });
}

std::vector<double> jump_points(std::span<const double> y, const Assignment& w_obs,
                                std::span<const Assignment> draws, double infinite_value) {
  check_draws(y, w_obs, draws);
  return generate_parallel(draws.size(), [&](std::size_t b) {
    return jump_point(y, w_obs, draws[b], infinite_value);
  });
}

std::vector<std::uint64_t> same_group_counts_serial(std::span<const Assignment> samples) {
  check_samples(samples);
  const std::size_t n = samples.front().n();
  std::vector<std::uint64_t> counts(n * (n - 1) / 2, 0);
  for (const auto& s : samples) {
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j, ++r) counts[r] += s[i] == s[j];
    }
  }
  return counts;
}

std::vector<std::uint64_t> same_group_counts(std::span<const Assignment> samples) {
  check_samples(samples);
  const std::size_t n = samples.front().n();
  const auto total = static_cast<std::int64_t>(samples.size());
  // both[i*n+j] counts draws with w_i = w_j = 1; the same-group count is then
  // B - ones_i - ones_j + 2 * both. Integer sums, so thread order is irrelevant.
  std::vector<std::uint64_t> ones(n, 0);
  std::vector<std::uint64_t> both(n * n, 0);
#pragma omp parallel
  {
    std::vector<std::uint64_t> local_ones(n, 0);
    std::vector<std::uint64_t> local_both(n * n, 0);
    std::vector<std::size_t> idx;
    idx.reserve(n);
#pragma omp for schedule(static) nowait
    for (std::int64_t b = 0; b < total; ++b) {
      const auto& s = samples[static_cast<std::size_t>(b)];
      idx.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (s.treated(i)) idx.push_back(i);
      }
      for (std::size_t a = 0; a < idx.size(); ++a) {
        ++local_ones[idx[a]];
        for (std::size_t c = a + 1; c < idx.size(); ++c) ++local_both[idx[a] * n + idx[c]];
      }
    }
#pragma omp critical
    {
      for (std::size_t i = 0; i < n; ++i) ones[i] += local_ones[i];
      for (std::size_t k = 0; k < n * n; ++k) both[k] += local_both[k];
    }
  }
  const std::uint64_t b_total = samples.size();
  std::vector<std::uint64_t> counts(n * (n - 1) / 2, 0);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++r) {
      counts[r] = b_total - ones[i] - ones[j] + 2 * both[i * n + j];
    }
  }
  return counts;
}

}  // namespace rebalance::kernels
