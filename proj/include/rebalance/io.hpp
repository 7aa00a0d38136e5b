#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rebalance/balance.hpp"
#include "rebalance/bench.hpp"
#include "rebalance/sequential.hpp"

namespace rebalance::io {

/// Comma-separated numeric table. A first row with any non-numeric cell is
/// taken as the header. LF and CRLF line ends are accepted.
struct CsvTable {
  std::vector<std::string> headers;
  std::vector<std::vector<double>> rows;

  std::size_t cols() const noexcept { return rows.empty() ? headers.size() : rows.front().size(); }
  Matrix to_matrix() const;
};

/// Throws ValidationError (ragged rows, non-finite or unparsable cells) and
/// EmptyInput (no data rows).
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

CovariateMatrix read_covariates(const std::filesystem::path& path);
/// Single-column file.
std::vector<double> read_column(const std::filesystem::path& path);
Assignment read_assignment(const std::filesystem::path& path);
/// n x B matrix, one assignment per column.
std::vector<Assignment> read_assignment_matrix(const std::filesystem::path& path);

std::string format_column(const Assignment& w);
std::string format_assignment_matrix(const std::vector<Assignment>& draws);

/// Session document with fields format_version, method, gamma, schedule,
/// k_done, covariates {rows, cols, data (row-major)}, assignment, m_history,
/// base_seed, draw_counters. Reloading is bit-exact.
std::string session_to_json(const SeqSession& session);
/// Schema violations throw ValidationError naming the JSON pointer of the
/// offending field.
SeqSession session_from_json(std::string_view text);

/// {"group_sizes": [...], "treated_sizes": [...], "draws": [...],
///  "cap_multiplier": 10}; treated_sizes defaults to half of each group.
Schedule schedule_from_json(std::string_view text);

/// Flat key = value file with an optional [sequential] table. Supports
/// integers, floats, booleans, strings and one-line arrays.
BenchConfig bench_config_from_toml(std::string_view text);

}  // namespace rebalance::io
