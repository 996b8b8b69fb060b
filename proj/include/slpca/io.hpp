#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slpca/selection.hpp"
#include "slpca/types.hpp"

namespace slpca {

inline constexpr const char* library_version = "0.1.0";

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline bool is_na_token(const std::string& t) {
  return t.empty() || t == "NA" || t == "na" || t == "Na" || t == "NaN" || t == "nan";
}

inline bool parse_double(const std::string& t, double& out) {
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [p, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && p == last;
}

// A token is "real-typed" when it carries a decimal point or exponent;
// integral 0/1 tokens keep a column eligible for the binary tag.
inline bool real_typed(const std::string& t) {
  return t.find_first_of(".eE") != std::string::npos;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Optional sidecar schema: lines of "<1-based column index or name>,<binary|continuous>".
inline std::map<std::string, ColKind> load_schema(const std::string& path) {
  std::map<std::string, ColKind> schema;
  std::ifstream in(path);
  if (!in) throw io_error("cannot open schema file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto parts = detail::split(line, ',');
    if (parts.size() != 2)
      throw validation_error("schema line " + std::to_string(lineno) +
                             ": expected '<column>,<binary|continuous>'");
    const std::string kind = detail::trim(parts[1]);
    if (kind != "binary" && kind != "continuous")
      throw validation_error("schema line " + std::to_string(lineno) + ": unknown kind '" + kind +
                             "'");
    schema[detail::trim(parts[0])] = kind == "binary" ? ColKind::binary : ColKind::continuous;
  }
  return schema;
}

/// Parse a CSV data matrix.  An optional header row carries column names;
/// cells are 0, 1 or NA for binary columns, and real-valued columns are
/// auto-tagged continuous unless the schema overrides.  NA populates the
/// missingness mask.
inline BinaryDataMatrix load_matrix(const std::string& path,
                                    const std::map<std::string, ColKind>& schema = {}) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open data file: " + path);

  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto toks = detail::split(line, ',');
    for (auto& t : toks) t = detail::trim(t);
    rows.push_back(std::move(toks));
  }
  if (rows.empty()) throw validation_error("empty data file: " + path);

  // Header row: any token that is neither numeric nor NA.
  std::vector<std::string> names;
  std::size_t first_data = 0;
  for (const auto& t : rows[0]) {
    double v;
    if (!detail::is_na_token(t) && !detail::parse_double(t, v)) {
      names = rows[0];
      first_data = 1;
      break;
    }
  }
  if (first_data == rows.size()) throw validation_error("data file has a header but no rows");

  const std::size_t d = rows[first_data].size();
  const std::size_t n = rows.size() - first_data;
  if (!names.empty() && names.size() != d)
    throw validation_error("header width does not match data width");

  Matrix values = Matrix::Zero(static_cast<Index>(n), static_cast<Index>(d));
  MaskMatrix missing = MaskMatrix::Constant(static_cast<Index>(n), static_cast<Index>(d), false);
  std::vector<bool> col_real(d, false);

  for (std::size_t r = 0; r < n; ++r) {
    const auto& toks = rows[first_data + r];
    if (toks.size() != d)
      throw validation_error("ragged row " + std::to_string(r + 1) + ": expected " +
                             std::to_string(d) + " cells, found " + std::to_string(toks.size()));
    for (std::size_t c = 0; c < d; ++c) {
      const std::string& t = toks[c];
      if (detail::is_na_token(t)) {
        missing(static_cast<Index>(r), static_cast<Index>(c)) = true;
        continue;
      }
      double v;
      if (!detail::parse_double(t, v))
        throw validation_error("malformed cell '" + t + "' at row " + std::to_string(r + 1) +
                               ", col " + std::to_string(c + 1));
      values(static_cast<Index>(r), static_cast<Index>(c)) = v;
      if (detail::real_typed(t)) col_real[c] = true;
    }
  }

  std::vector<ColKind> kinds(d, ColKind::binary);
  for (std::size_t c = 0; c < d; ++c) {
    const ColKind* forced = nullptr;
    auto by_index = schema.find(std::to_string(c + 1));
    if (by_index != schema.end()) forced = &by_index->second;
    if (!forced && !names.empty()) {
      auto by_name = schema.find(names[c]);
      if (by_name != schema.end()) forced = &by_name->second;
    }
    kinds[c] = forced ? *forced : (col_real[c] ? ColKind::continuous : ColKind::binary);
    if (kinds[c] == ColKind::binary) {
      for (std::size_t r = 0; r < n; ++r) {
        const Index i = static_cast<Index>(r), j = static_cast<Index>(c);
        if (missing(i, j)) continue;
        const double v = values(i, j);
        if (v != 0.0 && v != 1.0)
          throw validation_error("cell '" + detail::format_double(v) +
                                 "' in a binary column at row " + std::to_string(r + 1) +
                                 ", col " + std::to_string(c + 1));
      }
    }
  }

  return BinaryDataMatrix(std::move(values), std::move(missing), std::move(kinds),
                          std::move(names));
}

/// Generic numeric CSV reader (no NA handling); used for model round trips.
inline Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto toks = detail::split(line, ',');
    std::vector<double> row;
    for (const auto& t : toks) {
      double v;
      if (!detail::parse_double(detail::trim(t), v))
        throw validation_error("malformed numeric cell '" + t + "' in " + path);
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows[0].size())
      throw validation_error("ragged row in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw validation_error("empty matrix file: " + path);
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write file: " + path);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << detail::format_double(m(i, j));
    }
    out << '\n';
  }
}

inline void write_vector_csv(const std::string& path, const Vector& v) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write file: " + path);
  for (Index i = 0; i < v.size(); ++i) out << detail::format_double(v[i]) << '\n';
}

/// Command-level record pinning inputs, configuration and seed, so that
/// equal manifests imply byte-identical numeric outputs.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string input_digest;
  std::string version = library_version;
  std::string timestamp;

  nlohmann::json to_json() const {
    return {{"command", command}, {"config", config},   {"seed", seed},
            {"input_digest", input_digest}, {"library_version", version},
            {"timestamp", timestamp}};
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline std::string file_digest(const std::string& path) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(detail::fnv1a64(detail::read_file(path))));
  return buf;
}

inline nlohmann::json fit_config_json(const FitConfig& cfg) {
  std::vector<double> lam(cfg.lambda.data(), cfg.lambda.data() + cfg.lambda.size());
  return {{"k", cfg.k},
          {"bound", to_string(cfg.bound)},
          {"link", to_string(cfg.link)},
          {"lambda", lam},
          {"tol", cfg.tol},
          {"max_iter", cfg.max_iter},
          {"restarts", cfg.restarts},
          {"seed", cfg.seed},
          {"zero_eps", cfg.zero_eps},
          {"prob_clamp", cfg.prob_clamp}};
}

inline void write_manifest(const std::string& dir, const RunManifest& manifest) {
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw io_error("cannot write manifest in " + dir);
  out << manifest.to_json().dump(2) << '\n';
}

/// Emit mu.csv, scores.csv, loadings.csv, trace.csv, summary.json and the
/// manifest into dir.  Exact zeros in B are written as 0.
inline void write_model(const SlpcaModel& model, const FitResult& result, const std::string& dir,
                        const RunManifest& manifest, double bic_value,
                        const std::vector<std::string>& col_names = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create output directory: " + dir);

  write_vector_csv(dir + "/mu.csv", model.mu);
  write_matrix_csv(dir + "/scores.csv", model.A);
  write_matrix_csv(dir + "/loadings.csv", model.B);
  {
    std::ofstream out(dir + "/trace.csv");
    if (!out) throw io_error("cannot write trace in " + dir);
    for (double v : result.objective_trace) out << detail::format_double(v) << '\n';
  }

  std::vector<double> lam(model.lambda.data(), model.lambda.data() + model.lambda.size());
  nlohmann::json summary = {{"k", model.k()},
                            {"lambda", lam},
                            {"link", to_string(model.link)},
                            {"nnz", result.nnz},
                            {"final_objective", result.final_objective()},
                            {"bic", bic_value},
                            {"iterations", result.iterations},
                            {"converged", result.converged}};
  if (model.sigma2) summary["sigma2"] = *model.sigma2;
  if (!col_names.empty()) summary["columns"] = col_names;
  std::ofstream out(dir + "/summary.json");
  if (!out) throw io_error("cannot write summary in " + dir);
  out << summary.dump(2) << '\n';

  write_manifest(dir, manifest);
}

/// Reload a model written by write_model.
inline SlpcaModel load_model(const std::string& dir) {
  SlpcaModel model;
  const Matrix mu = read_matrix_csv(dir + "/mu.csv");
  model.mu = mu.col(0);
  model.A = read_matrix_csv(dir + "/scores.csv");
  model.B = read_matrix_csv(dir + "/loadings.csv");

  std::ifstream in(dir + "/summary.json");
  if (!in) throw io_error("cannot open summary in " + dir);
  nlohmann::json summary;
  in >> summary;
  model.link = summary.at("link").get<std::string>() == "probit" ? Link::probit : Link::logit;
  const auto lam = summary.at("lambda").get<std::vector<double>>();
  model.lambda = Eigen::Map<const Vector>(lam.data(), static_cast<Index>(lam.size()));
  if (model.lambda.size() != model.k())
    model.lambda = Vector::Constant(model.k(), lam.empty() ? 0.0 : lam[0]);
  if (summary.contains("sigma2")) model.sigma2 = summary["sigma2"].get<double>();
  return model;
}

/// Row labels, one per line.  Arbitrary strings map to integer group ids
/// in first-appearance order.
inline std::pair<std::vector<int>, std::vector<std::string>> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open labels file: " + path);
  std::vector<int> ids;
  std::vector<std::string> names;
  std::map<std::string, int> seen;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    auto it = seen.find(t);
    if (it == seen.end()) {
      it = seen.emplace(t, static_cast<int>(names.size())).first;
      names.push_back(t);
    }
    ids.push_back(it->second);
  }
  if (ids.empty()) throw validation_error("empty labels file: " + path);
  return {ids, names};
}

/// Key-value simulation spec file; see README for the field list.
inline std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open spec file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw validation_error("spec line " + std::to_string(lineno) + ": expected key = value");
    kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
  }
  return kv;
}

}  // namespace slpca
