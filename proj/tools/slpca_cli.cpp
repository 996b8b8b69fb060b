// slpca: sparse logistic principal components analysis for binary data.
//
// Subcommands: fit, select, simulate, bootstrap, diagnose.  All numeric
// output is written with 17 significant digits so reruns round-trip
// exactly; every output directory receives a manifest recording the
// command, resolved configuration, seed and input digest.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <slpca/slpca.hpp>

namespace fs = std::filesystem;
using namespace slpca;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDegenerate = 3;
constexpr int kExitIo = 4;

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const std::string& tok : detail::split(text, ',')) {
    const std::string t = detail::trim(tok);
    if (t.empty()) continue;
    double v;
    if (!detail::parse_double(t, v)) throw validation_error("bad number in list: '" + t + "'");
    out.push_back(v);
  }
  if (out.empty()) throw validation_error("empty numeric list: '" + text + "'");
  return out;
}

// "1-20,25; 21-40" -> one 0-based index set per ';'-separated component
std::vector<std::vector<Index>> parse_support(const std::string& text) {
  std::vector<std::vector<Index>> out;
  for (const std::string& comp : detail::split(text, ';')) {
    std::vector<Index> cols;
    for (const std::string& tok : detail::split(comp, ',')) {
      const std::string t = detail::trim(tok);
      if (t.empty()) continue;
      const auto dash = t.find('-', 1);  // allow leading minus to fail parse below
      if (dash != std::string::npos) {
        const long a = std::stol(t.substr(0, dash));
        const long b = std::stol(t.substr(dash + 1));
        if (a < 1 || b < a) throw validation_error("bad support range: '" + t + "'");
        for (long j = a; j <= b; ++j) cols.push_back(static_cast<Index>(j - 1));
      } else {
        const long j = std::stol(t);
        if (j < 1) throw validation_error("bad support index: '" + t + "'");
        cols.push_back(static_cast<Index>(j - 1));
      }
    }
    if (!cols.empty()) out.push_back(std::move(cols));
  }
  if (out.empty()) throw validation_error("empty support specification");
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create output directory: " + dir);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write file: " + path);
  return out;
}

struct FitFlags {
  std::string data_path, schema_path, out_dir;
  Index k = 2;
  std::string lambda = "0";
  bool select_lambda = false;
  std::string grid;
  std::string link = "logit", bound = "uniform";
  double tol = 1e-6;
  int max_iter = 2000;
  int restarts = 1;
  std::uint64_t seed = 0;
  double zero_eps = 1e-10;
};

void add_common_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("data", f.data_path, "input CSV (0/1/NA cells, optional header)")->required();
  cmd->add_option("--schema", f.schema_path, "sidecar column-kind schema");
  cmd->add_option("--link", f.link, "logit|probit")->check(CLI::IsMember({"logit", "probit"}));
  cmd->add_option("--bound", f.bound, "uniform|tight")->check(CLI::IsMember({"uniform", "tight"}));
  cmd->add_option("--tol", f.tol, "relative objective convergence threshold");
  cmd->add_option("--max-iter", f.max_iter, "iteration cap");
  cmd->add_option("--restarts", f.restarts, "independent random starts");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--zero-eps", f.zero_eps, "loading zero-absorption threshold");
  cmd->add_option("--out", f.out_dir, "output directory")->required();
}

FitConfig to_config(const FitFlags& f) {
  FitConfig cfg;
  cfg.k = f.k;
  cfg.link = f.link == "probit" ? Link::probit : Link::logit;
  cfg.bound = f.bound == "tight" ? Bound::tight : Bound::uniform;
  cfg.tol = f.tol;
  cfg.max_iter = f.max_iter;
  cfg.restarts = f.restarts;
  cfg.seed = f.seed;
  cfg.zero_eps = f.zero_eps;
  const auto lam = parse_double_list(f.lambda);
  cfg.lambda = Eigen::Map<const Vector>(lam.data(), static_cast<Index>(lam.size()));
  return cfg;
}

FitConfig config_from_manifest(const std::string& model_dir) {
  std::ifstream in(model_dir + "/manifest.json");
  if (!in) throw io_error("cannot open manifest in " + model_dir);
  nlohmann::json j;
  in >> j;
  const auto& c = j.at("config");
  FitConfig cfg;
  cfg.k = c.at("k").get<Index>();
  cfg.link = c.at("link").get<std::string>() == "probit" ? Link::probit : Link::logit;
  cfg.bound = c.at("bound").get<std::string>() == "tight" ? Bound::tight : Bound::uniform;
  cfg.tol = c.at("tol").get<double>();
  cfg.max_iter = c.at("max_iter").get<int>();
  cfg.restarts = c.at("restarts").get<int>();
  cfg.seed = c.at("seed").get<std::uint64_t>();
  cfg.zero_eps = c.at("zero_eps").get<double>();
  cfg.prob_clamp = c.at("prob_clamp").get<double>();
  const auto lam = c.at("lambda").get<std::vector<double>>();
  cfg.lambda = Eigen::Map<const Vector>(lam.data(), static_cast<Index>(lam.size()));
  return cfg;
}

void write_selection_report(const std::string& path, const SelectionReport& rep,
                            const char* param_name) {
  auto out = open_out(path);
  out << param_name << "\tbic\tnnz\tlog_lik\n";
  for (const auto& row : rep.grid)
    out << detail::format_double(row.value) << '\t' << detail::format_double(row.bic) << '\t'
        << row.nnz << '\t' << detail::format_double(row.log_lik) << '\n';
}

int cmd_fit(const FitFlags& flags) {
  const auto schema = flags.schema_path.empty() ? std::map<std::string, ColKind>{}
                                                : load_schema(flags.schema_path);
  const BinaryDataMatrix data = load_matrix(flags.data_path, schema);
  FitConfig cfg = to_config(flags);

  FitResult result;
  std::optional<SelectionReport> report;
  if (flags.select_lambda) {
    SelectionConfig sel;
    sel.base = cfg;
    const std::vector<double> grid =
        flags.grid.empty() ? default_fine_grid() : parse_double_list(flags.grid);
    report = slpca::select_lambda(data, cfg.k, grid, sel);
    result = *report->chosen_fit;
    cfg.lambda = Vector::Constant(1, report->chosen);
  } else {
    result = fit(data, cfg);
  }

  ensure_dir(flags.out_dir);
  RunManifest manifest;
  manifest.command = flags.select_lambda ? "fit --select-lambda" : "fit";
  manifest.config = fit_config_json(cfg);
  manifest.seed = cfg.seed;
  manifest.input_digest = file_digest(flags.data_path);
  manifest.timestamp = utc_timestamp();
  write_model(result.model, result, flags.out_dir, manifest, bic(data, result),
              data.col_names());
  if (report) write_selection_report(flags.out_dir + "/selection.tsv", *report, "lambda");

  std::cout << "fit: k=" << result.model.k() << " nnz=" << result.nnz
            << " iterations=" << result.iterations << " converged=" << result.converged
            << " objective=" << detail::format_double(result.final_objective()) << '\n';
  return kExitOk;
}

int cmd_select(const FitFlags& flags, Index k_init, Index k_max, const std::string& rough,
               const std::string& fine, bool fresh) {
  const auto schema = flags.schema_path.empty() ? std::map<std::string, ColKind>{}
                                                : load_schema(flags.schema_path);
  const BinaryDataMatrix data = load_matrix(flags.data_path, schema);

  SelectionConfig sel;
  sel.base = to_config(flags);
  sel.k_init = k_init;
  sel.k_max = k_max;
  sel.warm_start = !fresh;
  if (!rough.empty()) sel.rough_grid = parse_double_list(rough);
  if (!fine.empty()) sel.fine_grid = parse_double_list(fine);

  const StagedSelection staged = select_k(data, sel);
  const FitResult& result = staged.final_fit();

  ensure_dir(flags.out_dir);
  FitConfig chosen = sel.base;
  chosen.k = staged.k;
  chosen.lambda = Vector::Constant(1, staged.lambda);
  RunManifest manifest;
  manifest.command = "select";
  manifest.config = fit_config_json(chosen);
  manifest.config["k_init"] = sel.k_init;
  manifest.config["k_max"] = sel.k_max;
  manifest.config["warm_start"] = sel.warm_start;
  manifest.seed = sel.base.seed;
  manifest.input_digest = file_digest(flags.data_path);
  manifest.timestamp = utc_timestamp();
  write_model(result.model, result, flags.out_dir, manifest, bic(data, result),
              data.col_names());
  write_selection_report(flags.out_dir + "/stage1_lambda.tsv", staged.stage1, "lambda");
  write_selection_report(flags.out_dir + "/stage2_k.tsv", staged.stage2, "k");
  write_selection_report(flags.out_dir + "/stage3_lambda.tsv", staged.stage3, "lambda");

  std::cout << "select: k=" << staged.k << " lambda=" << detail::format_double(staged.lambda)
            << " fits=" << staged.total_fits() << " nnz=" << result.nnz << '\n';
  return kExitOk;
}

int cmd_simulate(const std::string& spec_path, const std::string& out_dir) {
  const auto kv = load_key_values(spec_path);
  auto get = [&](const char* key, const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  };
  auto require = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw validation_error(std::string("spec file missing key: ") + key);
    return it->second;
  };

  SimulationSpec spec;
  spec.n = std::stol(require("n"));
  spec.d = std::stol(require("d"));
  spec.k_true = std::stol(require("k_true"));
  for (double s : parse_double_list(require("snr"))) spec.snr.push_back(s);
  spec.support = parse_support(require("support"));
  spec.replicates = std::stoi(get("replicates", "20"));
  spec.seed = std::stoull(get("seed", "0"));
  const std::string k_fit = get("k_fit", "select");
  spec.k_fit = k_fit == "select" ? 0 : std::stoi(k_fit);

  ExperimentOptions opt;
  opt.baseline_replicates = std::stoi(get("baseline_replicates", "100"));
  opt.k_large = std::stol(get("k_large", "30"));
  opt.selection.k_max = std::stol(get("k_max", "10"));
  opt.selection.base.max_iter = std::stoi(get("max_iter", "2000"));
  opt.selection.base.tol = std::stod(get("tol", "1e-6"));
  opt.selection.warm_start = get("warm_start", "true") == "true";
  opt.selection.base.link = get("link", "logit") == "probit" ? Link::probit : Link::logit;
  opt.selection.base.bound = get("bound", "uniform") == "tight" ? Bound::tight : Bound::uniform;
  if (kv.count("lambda_grid")) opt.lambda_grid = parse_double_list(kv.at("lambda_grid"));
  if (kv.count("rough_grid")) opt.selection.rough_grid = parse_double_list(kv.at("rough_grid"));
  if (kv.count("fine_grid")) opt.selection.fine_grid = parse_double_list(kv.at("fine_grid"));

  std::vector<ExperimentMode> modes;
  for (const std::string& tok :
       detail::split(get("modes", "regularized:k_true,nonregularized:k_true"), ',')) {
    const std::string t = detail::trim(tok);
    if (t.empty()) continue;
    ExperimentMode mode;
    if (t.rfind("nonregularized", 0) == 0) {
      mode.regularized = false;
    } else if (t.rfind("regularized", 0) == 0) {
      mode.regularized = true;
    } else {
      throw validation_error("bad mode token: '" + t + "'");
    }
    if (t.find("k_select") != std::string::npos) {
      mode.rank = RankChoice::k_select;
    } else if (t.find("k_large") != std::string::npos) {
      mode.rank = RankChoice::k_large;
    } else {
      mode.rank = RankChoice::k_true;
    }
    modes.push_back(mode);
  }
  if (spec.k_fit == 0 && modes.size() == 1 && modes[0].rank == RankChoice::k_true &&
      kv.count("modes") == 0)
    modes[0].rank = RankChoice::k_select;

  const ExperimentResult result = run_experiment(spec, modes, opt);

  ensure_dir(out_dir);
  {
    auto out = open_out(out_dir + "/angles.tsv");
    out << "mode\treplicates\tmean_angle_deg\tse\n";
    for (const auto& m : result.modes)
      out << m.label << '\t' << m.n_angle << '\t' << detail::format_double(m.mean_angle) << '\t'
          << detail::format_double(m.se_angle) << '\n';
  }
  {
    auto out = open_out(out_dir + "/false_positives.tsv");
    out << "mode\treplicates\tmean_fp_pct\tse\n";
    for (const auto& m : result.modes) {
      if (m.fps.empty()) continue;
      out << m.label << '\t' << m.n_fp << '\t' << detail::format_double(m.mean_fp) << '\t'
          << detail::format_double(m.se_fp) << '\n';
    }
  }
  {
    auto out = open_out(out_dir + "/selected_k.tsv");
    out << "k\tfrequency\n";
    for (const auto& [k, c] : result.k_frequency) out << k << '\t' << c << '\n';
  }
  RunManifest manifest;
  manifest.command = "simulate";
  manifest.config = {{"spec_file", spec_path},
                     {"n", spec.n},
                     {"d", spec.d},
                     {"k_true", spec.k_true},
                     {"snr", spec.snr},
                     {"replicates", spec.replicates},
                     {"seed", spec.seed},
                     {"baseline", result.baseline},
                     {"baseline_replicates", opt.baseline_replicates},
                     {"trace_violations", result.trace_violations}};
  manifest.seed = spec.seed;
  manifest.input_digest = file_digest(spec_path);
  manifest.timestamp = utc_timestamp();
  write_manifest(out_dir, manifest);

  std::cout << "simulate: baseline=" << detail::format_double(result.baseline)
            << " trace_violations=" << result.trace_violations << '\n';
  for (const auto& m : result.modes)
    std::cout << "  " << m.label << ": angle=" << detail::format_double(m.mean_angle) << " (se "
              << detail::format_double(m.se_angle) << ") over " << m.n_angle << " replicates\n";
  return kExitOk;
}

int cmd_bootstrap(const std::string& data_path, const std::string& model_dir, int n_boot,
                  std::uint64_t seed, bool cold, const std::string& out_dir) {
  const BinaryDataMatrix data = load_matrix(data_path);
  const SlpcaModel model = load_model(model_dir);
  const FitConfig cfg = config_from_manifest(model_dir);

  const BootstrapEnvelope env = bootstrap_envelope(data, model, cfg, n_boot, seed, !cold);

  ensure_dir(out_dir);
  {
    auto out = open_out(out_dir + "/envelope.tsv");
    out << "index\tpoint\tlower\tupper\n";
    for (Index c = 0; c < env.point.size(); ++c)
      out << c << '\t' << detail::format_double(env.point[c]) << '\t'
          << detail::format_double(env.lower[c]) << '\t' << detail::format_double(env.upper[c])
          << '\n';
  }
  RunManifest manifest;
  manifest.command = "bootstrap";
  manifest.config = fit_config_json(cfg);
  manifest.config["n_boot"] = n_boot;
  manifest.config["cold_start"] = cold;
  manifest.config["refit_failures"] = env.n_failures;
  manifest.seed = seed;
  manifest.input_digest = file_digest(data_path);
  manifest.timestamp = utc_timestamp();
  write_manifest(out_dir, manifest);

  std::cout << "bootstrap: replicates=" << n_boot << " failures=" << env.n_failures
            << " mean_width=" << detail::format_double(env.mean_width()) << '\n';
  return kExitOk;
}

int cmd_diagnose(const std::string& data_path, const std::string& model_dir,
                 const std::string& labels_path, const std::string& col_groups_path, bool permute,
                 std::uint64_t seed, const std::string& out_dir) {
  const BinaryDataMatrix data = load_matrix(data_path);
  const SlpcaModel model = load_model(model_dir);
  ensure_dir(out_dir);

  // residual pairwise correlations per column group (all columns when no grouping given)
  const Matrix residuals = pearson_residuals(data, model);
  std::vector<std::vector<Index>> groups;
  if (col_groups_path.empty()) {
    groups.emplace_back();
    for (Index j = 0; j < data.cols(); ++j)
      if (data.col_kind(j) == ColKind::binary) groups.back().push_back(j);
  } else {
    const auto [ids, names] = load_labels(col_groups_path);
    if (static_cast<Index>(ids.size()) != data.cols())
      throw validation_error("column group file length must equal the column count");
    groups.resize(names.size());
    for (Index j = 0; j < data.cols(); ++j)
      groups[static_cast<std::size_t>(ids[static_cast<std::size_t>(j)])].push_back(j);
  }
  const PairwiseCorrelations corr = residual_pairwise_correlations(residuals, groups);
  {
    auto out = open_out(out_dir + "/residual_correlations.tsv");
    out << "correlation\n";
    for (double c : corr.correlations) out << detail::format_double(c) << '\n';
  }

  nlohmann::json summary = {{"pairs", corr.correlations.size()},
                            {"skipped_pairs", corr.skipped}};

  // F tests of each PC's scores on the row groups
  if (!labels_path.empty()) {
    const auto [labels, names] = load_labels(labels_path);
    if (static_cast<Index>(labels.size()) != data.rows())
      throw validation_error("labels file length must equal the row count");
    auto out = open_out(out_dir + "/ftests.tsv");
    out << "component\tF\tp\n";
    for (Index l = 0; l < model.k(); ++l) {
      const FTestResult f = group_f_test(model.A.col(l), labels);
      out << (l + 1) << '\t' << detail::format_double(f.f) << '\t' << detail::format_double(f.p)
          << '\n';
    }

    if (permute) {
      // permute observations within each column, refit with the stored
      // configuration, and re-run the F tests; group structure should vanish
      const FitConfig cfg = config_from_manifest(model_dir);
      Rng rng = Rng::derive(seed, 0x7065726d757465ULL);
      Matrix values = data.values();
      MaskMatrix mask = data.mask();
      for (Index j = 0; j < data.cols(); ++j) {
        for (Index i = data.rows() - 1; i > 0; --i) {
          const Index s = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
          std::swap(values(i, j), values(s, j));
          std::swap(mask(i, j), mask(s, j));
        }
      }
      const BinaryDataMatrix permuted(values, mask, data.col_kinds());
      const FitResult refit = fit(permuted, cfg);
      auto pout = open_out(out_dir + "/ftests_permuted.tsv");
      pout << "component\tF\tp\n";
      for (Index l = 0; l < refit.model.k(); ++l) {
        const FTestResult f = group_f_test(refit.model.A.col(l), labels);
        pout << (l + 1) << '\t' << detail::format_double(f.f) << '\t'
             << detail::format_double(f.p) << '\n';
      }
    }
  }

  RunManifest manifest;
  manifest.command = "diagnose";
  manifest.config = summary;
  manifest.seed = seed;
  manifest.input_digest = file_digest(data_path);
  manifest.timestamp = utc_timestamp();
  write_manifest(out_dir, manifest);
  std::ofstream(out_dir + "/summary.json") << summary.dump(2) << '\n';

  std::cout << "diagnose: pairs=" << corr.correlations.size() << " skipped=" << corr.skipped
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse logistic PCA for binary data"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (default: SLPCA_THREADS or hardware)");

  FitFlags fit_flags;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit a model at fixed rank");
  add_common_fit_flags(fit_cmd, fit_flags);
  fit_cmd->add_option("--k", fit_flags.k, "number of components")->required();
  fit_cmd->add_option("--lambda", fit_flags.lambda, "penalty (scalar or comma list per component)");
  fit_cmd->add_flag("--select-lambda", fit_flags.select_lambda, "choose lambda by BIC over a grid");
  fit_cmd->add_option("--grid", fit_flags.grid, "lambda grid for --select-lambda (comma list)");

  FitFlags sel_flags;
  Index k_init = 30, k_max = 10;
  std::string rough_grid, fine_grid;
  bool fresh = false;
  CLI::App* sel_cmd = app.add_subcommand("select", "staged BIC search over rank and penalty");
  add_common_fit_flags(sel_cmd, sel_flags);
  sel_cmd->add_option("--k-init", k_init, "large initial rank for stage 1");
  sel_cmd->add_option("--k-max", k_max, "largest rank scanned in stage 2");
  sel_cmd->add_option("--rough-grid", rough_grid, "stage-1 lambda grid (comma list)");
  sel_cmd->add_option("--fine-grid", fine_grid, "stage-3 lambda grid (comma list)");
  sel_cmd->add_flag("--fresh", fresh, "refit each grid point from scratch instead of warm starts");

  std::string sim_spec, sim_out;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "planted-model experiment batteries");
  sim_cmd->add_option("--spec", sim_spec, "key-value experiment description")->required();
  sim_cmd->add_option("--out", sim_out, "output directory")->required();

  std::string boot_data, boot_model, boot_out;
  int n_boot = 100;
  std::uint64_t boot_seed = 0;
  bool boot_cold = false;
  CLI::App* boot_cmd = app.add_subcommand("bootstrap", "parametric bootstrap envelope");
  boot_cmd->add_option("data", boot_data, "input CSV")->required();
  boot_cmd->add_option("--model", boot_model, "directory written by fit/select")->required();
  boot_cmd->add_option("--n-boot", n_boot, "bootstrap replicates");
  boot_cmd->add_option("--seed", boot_seed, "RNG seed");
  boot_cmd->add_flag("--cold", boot_cold, "refit from random starts instead of warm starts");
  boot_cmd->add_option("--out", boot_out, "output directory")->required();

  std::string diag_data, diag_model, diag_labels, diag_groups, diag_out;
  bool diag_permute = false;
  std::uint64_t diag_seed = 0;
  CLI::App* diag_cmd = app.add_subcommand("diagnose", "residual correlations and score F tests");
  diag_cmd->add_option("data", diag_data, "input CSV")->required();
  diag_cmd->add_option("--model", diag_model, "directory written by fit/select")->required();
  diag_cmd->add_option("--labels", diag_labels, "row group labels, one per line");
  diag_cmd->add_option("--col-groups", diag_groups, "column group labels, one per line");
  diag_cmd->add_flag("--permute", diag_permute, "per-column permutation check");
  diag_cmd->add_option("--seed", diag_seed, "RNG seed");
  diag_cmd->add_option("--out", diag_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (threads > 0) set_max_threads(threads);
    if (*fit_cmd) return cmd_fit(fit_flags);
    if (*sel_cmd) return cmd_select(sel_flags, k_init, k_max, rough_grid, fine_grid, fresh);
    if (*sim_cmd) return cmd_simulate(sim_spec, sim_out);
    if (*boot_cmd) return cmd_bootstrap(boot_data, boot_model, n_boot, boot_seed, boot_cold, boot_out);
    if (*diag_cmd)
      return cmd_diagnose(diag_data, diag_model, diag_labels, diag_groups, diag_permute,
                          diag_seed, diag_out);
  } catch (const validation_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const degenerate_factor_error& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitDegenerate;
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}
