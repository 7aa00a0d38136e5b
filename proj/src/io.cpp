#include "rebalance/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace rebalance::io {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_double(std::string_view cell, double& out) {
  cell = trim(cell);
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size();
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// ---- session JSON schema helpers -------------------------------------------

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw ValidationError("session field '" + path + "': " + what);
}

const json& field(const json& obj, const std::string& path, const char* key) {
  if (!obj.is_object()) schema_error(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) schema_error(path + "/" + key, "missing");
  return *it;
}

std::uint64_t as_uint(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    schema_error(path, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) schema_error(path, "expected a number");
  return v.get<double>();
}

const json& as_array(const json& v, const std::string& path) {
  if (!v.is_array()) schema_error(path, "expected an array");
  return v;
}

template <class T, class F>
std::vector<T> array_of(const json& obj, const std::string& path, const char* key, F convert) {
  const std::string p = path + "/" + key;
  const json& arr = as_array(field(obj, path, key), p);
  std::vector<T> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(static_cast<T>(convert(arr[i], p + "/" + std::to_string(i))));
  }
  return out;
}

Schedule schedule_from(const json& obj, const std::string& path, bool default_treated) {
  Schedule s;
  s.group_sizes = array_of<std::size_t>(obj, path, "group_sizes", as_uint);
  if (default_treated && !obj.contains("treated_sizes")) {
    for (auto g : s.group_sizes) s.treated_sizes.push_back(g / 2);
  } else {
    s.treated_sizes = array_of<std::size_t>(obj, path, "treated_sizes", as_uint);
  }
  s.draws = array_of<std::uint64_t>(obj, path, "draws", as_uint);
  if (obj.contains("cap_multiplier")) {
    s.cap_multiplier = as_uint(obj["cap_multiplier"], path + "/cap_multiplier");
  }
  s.validate();
  return s;
}

json schedule_to(const Schedule& s) {
  return json{{"group_sizes", s.group_sizes},
              {"treated_sizes", s.treated_sizes},
              {"draws", s.draws},
              {"cap_multiplier", s.cap_multiplier}};
}

// ---- TOML subset -----------------------------------------------------------

using TomlValue = std::vector<std::string>;  // scalar = one element

TomlValue parse_toml_value(std::string_view raw, std::size_t line_no) {
  raw = trim(raw);
  auto unquote = [&](std::string_view v) -> std::string {
    v = trim(v);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
      return std::string(v.substr(1, v.size() - 2));
    }
    if (v.empty()) {
      throw ValidationError("config line " + std::to_string(line_no) + ": empty value");
    }
    return std::string(v);
  };
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') {
      throw ValidationError("config line " + std::to_string(line_no) + ": unterminated array");
    }
    TomlValue out;
    const auto inner = trim(raw.substr(1, raw.size() - 2));
    if (inner.empty()) return out;
    for (auto item : split(inner, ',')) {
      if (trim(item).empty()) continue;  // trailing comma
      out.push_back(unquote(item));
    }
    return out;
  }
  return {unquote(raw)};
}

std::string strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

double toml_double(const std::string& key, const TomlValue& v) {
  double out = 0.0;
  if (v.size() != 1 || !parse_double(v.front(), out) || !std::isfinite(out)) {
    throw ValidationError("config key '" + key + "': expected a number");
  }
  return out;
}

std::uint64_t toml_uint(const std::string& key, const TomlValue& v) {
  std::uint64_t out = 0;
  if (v.size() == 1) {
    const auto& s = v.front();
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc() && ptr == s.data() + s.size()) return out;
  }
  throw ValidationError("config key '" + key + "': expected a non-negative integer");
}

bool toml_bool(const std::string& key, const TomlValue& v) {
  if (v.size() == 1 && v.front() == "true") return true;
  if (v.size() == 1 && v.front() == "false") return false;
  throw ValidationError("config key '" + key + "': expected true or false");
}

}  // namespace

Matrix CsvTable::to_matrix() const {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t line_no = 0;
  bool first = true;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto cells = split(line, ',');
    std::vector<double> values(cells.size());
    bool numeric = true;
    for (std::size_t j = 0; j < cells.size(); ++j) numeric = numeric && parse_double(cells[j], values[j]);
    if (first && !numeric) {
      for (auto c : cells) table.headers.emplace_back(trim(c));
      first = false;
      if (end == text.size()) break;
      continue;
    }
    first = false;
    if (!numeric) {
      throw ValidationError("CSV line " + std::to_string(line_no) + ": non-numeric cell");
    }
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw ValidationError("CSV line " + std::to_string(line_no) + ": non-finite value");
      }
    }
    const std::size_t width = table.rows.empty()
                                  ? (table.headers.empty() ? values.size() : table.headers.size())
                                  : table.rows.front().size();
    if (values.size() != width) {
      throw ValidationError("CSV line " + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " columns, got " +
                            std::to_string(values.size()));
    }
    table.rows.push_back(std::move(values));
    if (end == text.size()) break;
  }
  if (table.rows.empty()) throw EmptyInput("CSV has no data rows");
  return table;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CsvTable read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::EmptyInput) throw EmptyInput(path.string() + ": " + e.what());
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void atomic_write(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw ValidationError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ValidationError("cannot rename '" + tmp.string() + "': " + ec.message());
}

CovariateMatrix read_covariates(const std::filesystem::path& path) {
  return CovariateMatrix(read_csv(path).to_matrix());
}

std::vector<double> read_column(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  if (table.cols() != 1) throw ValidationError(path.string() + ": expected a single column");
  std::vector<double> out;
  out.reserve(table.rows.size());
  for (const auto& r : table.rows) out.push_back(r.front());
  return out;
}

namespace {
std::uint8_t to_bit(double v, const std::filesystem::path& path) {
  if (v == 0.0) return 0;
  if (v == 1.0) return 1;
  throw ValidationError(path.string() + ": assignment entries must be 0 or 1");
}
}  // namespace

Assignment read_assignment(const std::filesystem::path& path) {
  const auto column = read_column(path);
  std::vector<std::uint8_t> w;
  w.reserve(column.size());
  for (double v : column) w.push_back(to_bit(v, path));
  return Assignment(std::move(w));
}

std::vector<Assignment> read_assignment_matrix(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  std::vector<Assignment> out;
  for (std::size_t b = 0; b < table.cols(); ++b) {
    std::vector<std::uint8_t> w;
    w.reserve(table.rows.size());
    for (const auto& r : table.rows) w.push_back(to_bit(r[b], path));
    out.emplace_back(std::move(w));
  }
  return out;
}

std::string format_column(const Assignment& w) {
  std::string out;
  out.reserve(2 * w.n());
  for (std::size_t i = 0; i < w.n(); ++i) {
    out.push_back(w.treated(i) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

std::string format_assignment_matrix(const std::vector<Assignment>& draws) {
  if (draws.empty()) return {};
  const std::size_t n = draws.front().n();
  std::string out;
  out.reserve(2 * n * draws.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < draws.size(); ++b) {
      if (b > 0) out.push_back(',');
      out.push_back(draws[b].treated(i) ? '1' : '0');
    }
    out.push_back('\n');
  }
  return out;
}

std::string session_to_json(const SeqSession& s) {
  json cov_data = json::array();
  const Matrix& x = s.covariates();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) cov_data.push_back(x(i, j));
  }
  std::vector<int> w(s.assignment().values().begin(), s.assignment().values().end());
  json doc{{"format_version", 1},
           {"method", std::string(to_string(s.method()))},
           {"gamma", s.gamma()},
           {"schedule", schedule_to(s.schedule())},
           {"k_done", s.k_done()},
           {"covariates", {{"rows", x.rows()}, {"cols", x.cols()}, {"data", cov_data}}},
           {"assignment", w},
           {"m_history", s.m_history()},
           {"base_seed", s.base_seed()},
           {"draw_counters", s.draw_counters()}};
  return doc.dump(2) + "\n";
}

SeqSession session_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("session is not valid JSON: ") + e.what());
  }
  const std::string root;
  const auto version = as_uint(field(doc, root, "format_version"), "/format_version");
  if (version != 1) schema_error("/format_version", "unsupported version " + std::to_string(version));

  const json& method_v = field(doc, root, "method");
  if (!method_v.is_string()) schema_error("/method", "expected a string");
  SeqDesign design;
  try {
    design.method = parse_seq_method(method_v.get<std::string>());
  } catch (const ValidationError&) {
    schema_error("/method", "unknown method '" + method_v.get<std::string>() + "'");
  }
  design.gamma = as_double(field(doc, root, "gamma"), "/gamma");
  try {
    design.schedule = schedule_from(field(doc, root, "schedule"), "/schedule", false);
  } catch (const ValidationError& e) {
    if (std::string_view(e.what()).rfind("session field", 0) == 0) throw;
    schema_error("/schedule", e.what());
  }
  const auto k_done = as_uint(field(doc, root, "k_done"), "/k_done");

  const json& cov = field(doc, root, "covariates");
  const auto rows = as_uint(field(cov, "/covariates", "rows"), "/covariates/rows");
  const auto cols = as_uint(field(cov, "/covariates", "cols"), "/covariates/cols");
  const auto data = array_of<double>(cov, "/covariates", "data", as_double);
  if (data.size() != rows * cols) schema_error("/covariates/data", "length differs from rows * cols");
  Matrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i * cols + j];
    }
  }

  const auto bits = array_of<std::uint8_t>(doc, root, "assignment", [](const json& v, const std::string& p) {
    const auto b = as_uint(v, p);
    if (b > 1) schema_error(p, "expected 0 or 1");
    return b;
  });
  auto m_history = array_of<double>(doc, root, "m_history", as_double);
  if (m_history.size() != k_done) schema_error("/m_history", "length differs from k_done");
  const auto base_seed = as_uint(field(doc, root, "base_seed"), "/base_seed");
  auto counters = array_of<std::uint64_t>(doc, root, "draw_counters", as_uint);
  if (counters.size() != k_done) schema_error("/draw_counters", "length differs from k_done");
  if (k_done == 0 && rows != 0) schema_error("/covariates/rows", "must be 0 before any group");

  try {
    return SeqSession::restore(std::move(design), base_seed, std::move(x), Assignment(bits),
                               std::move(m_history), std::move(counters));
  } catch (const Error& e) {
    throw ValidationError(std::string("session is inconsistent: ") + e.what());
  }
}

Schedule schedule_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("schedule is not valid JSON: ") + e.what());
  }
  return schedule_from(doc, "", true);
}

BenchConfig bench_config_from_toml(std::string_view text) {
  BenchConfig cfg;
  std::map<std::string, TomlValue> top, seq;
  std::map<std::string, TomlValue>* current = &top;
  bool has_seq = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string stripped = strip_comment(raw);
    const auto line = trim(stripped);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line == "[sequential]") {
        current = &seq;
        has_seq = true;
        continue;
      }
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown table " +
                            std::string(line));
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    (*current)[key] = parse_toml_value(line.substr(eq + 1), line_no);
  }

  for (const auto& [key, v] : top) {
    if (key == "n") cfg.n = toml_uint(key, v);
    else if (key == "p") cfg.p = toml_uint(key, v);
    else if (key == "r_squared") cfg.r_squared = toml_double(key, v);
    else if (key == "effect_multiplier") cfg.effect_multiplier = toml_double(key, v);
    else if (key == "n_rep") cfg.n_rep = toml_uint(key, v);
    else if (key == "b_frt") cfg.b_frt = toml_uint(key, v);
    else if (key == "methods") cfg.methods = v;
    else if (key == "seed") cfg.seed = toml_uint(key, v);
    else if (key == "alpha") cfg.alpha = toml_double(key, v);
    else if (key == "p_a") cfg.p_a = toml_double(key, v);
    else if (key == "gamma") cfg.gamma = toml_double(key, v);
    else if (key == "time_bisection") cfg.time_bisection = toml_bool(key, v);
    else if (key == "enumerate") cfg.enumerate = toml_bool(key, v);
    else if (key == "enumeration_cap") cfg.enumeration_cap = toml_uint(key, v);
    else throw ValidationError("config: unknown key '" + key + "'");
  }
  if (has_seq) {
    SequentialBenchConfig s;
    for (const auto& [key, v] : seq) {
      if (key == "k") s.k = toml_uint(key, v);
      else if (key == "n_k") s.n_k = toml_uint(key, v);
      else if (key == "cap_multiplier") s.cap_multiplier = toml_uint(key, v);
      else if (key == "draws") {
        s.draws.clear();
        for (const auto& d : v) s.draws.push_back(toml_uint("sequential.draws", {d}));
      } else {
        throw ValidationError("config: unknown key 'sequential." + key + "'");
      }
    }
    cfg.sequential = s;
    if (top.find("n") == top.end()) cfg.n = 0;
  }
  cfg.validate();
  return cfg;
}

}  // namespace rebalance::io
