// Command-line front end: `evidence fm|dpm|oracle|bf-paths ...`.
//
// Every subcommand accepts --config <file.json>; explicit flags override the
// corresponding config entries. Flag merging happens in JSON space so the
// strict config parser remains the single source of validation.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "evidence/errors.hpp"
#include "evidence/harness.hpp"
#include "evidence/oracle.hpp"

namespace {

using nlohmann::json;

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw evidence::invalid_input("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw evidence::parse_failure(std::string("config file ") + path + ": " + e.what());
  }
}

json parse_json_flag(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw evidence::parse_failure(what + ": " + e.what());
  }
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw evidence::parse_failure(what + ": cannot parse '" + tok + "' as a number");
    }
  }
  if (out.empty()) throw evidence::parse_failure(what + ": empty list");
  return out;
}

std::vector<long long> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<long long> out;
  for (double v : parse_double_list(text, what)) out.push_back(static_cast<long long>(v));
  return out;
}

// Shared flag set for the fm and dpm subcommands; raw strings keep "was this
// flag passed?" decisions with CLI11's count() and the parsing with the
// harness.
struct RunFlags {
  std::string config_path, estimator, data, synthetic, preset, tuning, alpha_vector, out;
  int k = 0, reps = 0, workers = 0;
  std::uint64_t seed = 0;
  double scale = 0, alpha = 0, mu0 = 0, lambda0 = 0, a0 = 0, b0 = 0;
  double gamma_a = 0, gamma_b = 0, reference = 0;
  bool raftery = false;
};

void add_run_flags(CLI::App* sub, RunFlags& f, bool fm) {
  sub->add_option("--config", f.config_path, "JSON config file; flags override its entries");
  sub->add_option("--estimator", f.estimator, "estimator id");
  if (fm) sub->add_option("--k", f.k, "number of mixture components");
  sub->add_option("--data", f.data, "dataset file, one value per line ('#' comments)");
  sub->add_option("--synthetic", f.synthetic,
                  "synthetic spec as JSON {k0,means,sds,weights,n,seed}");
  sub->add_option("--scale", f.scale, "multiply ingested data by this factor");
  sub->add_flag("--raftery,!--no-raftery", f.raftery,
                "data-driven hyperparameters (default); --no-raftery uses explicit values");
  sub->add_option("--mu0", f.mu0, "explicit prior mean location");
  sub->add_option("--lambda0", f.lambda0, "explicit prior precision scale");
  sub->add_option("--a0", f.a0, "explicit prior variance shape");
  sub->add_option("--b0", f.b0, "explicit prior variance scale");
  if (fm) {
    sub->add_option("--alpha", f.alpha, "symmetric Dirichlet weight-prior parameter");
    sub->add_option("--alpha-vector", f.alpha_vector, "comma-separated asymmetric Dirichlet");
  } else {
    sub->add_option("--gamma-a", f.gamma_a, "Gamma prior shape for the concentration");
    sub->add_option("--gamma-b", f.gamma_b, "Gamma prior rate for the concentration");
  }
  sub->add_option("--reps", f.reps, "independent repetitions");
  sub->add_option("--seed", f.seed, "base seed; repetition r uses substream r");
  sub->add_option("--preset", f.preset, "tuning preset (see --list-presets)");
  sub->add_option("--tuning", f.tuning, "JSON tuning overrides, e.g. '{\"draws\":1000}'");
  sub->add_option("--workers", f.workers, "worker threads (0: EVIDENCE_WORKERS or cores)");
  sub->add_option("--reference", f.reference,
                  "reference log evidence; emits squared-error CSV alongside results");
  sub->add_option("--out", f.out, "results CSV path (manifest written alongside)");
}

json merge_run_config(const CLI::App* sub, const RunFlags& f, const std::string& model) {
  json j = load_config(f.config_path);
  if (!j.is_object()) throw evidence::invalid_input("config file must hold a JSON object");
  j["model"] = model;
  const auto passed = [sub](const char* name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (passed("--estimator")) j["estimator"] = f.estimator;
  if (model == "fm" && passed("--k")) j["k"] = f.k;
  if (passed("--data")) j["data"] = f.data;
  if (passed("--synthetic"))
    j["synthetic"] = parse_json_flag(f.synthetic, "--synthetic");
  if (passed("--scale")) j["scale"] = f.scale;
  const bool explicit_prior =
      passed("--mu0") || passed("--lambda0") || passed("--a0") || passed("--b0");
  if (passed("--raftery") || explicit_prior) {
    if (!j.contains("prior")) j["prior"] = json::object();
    if (passed("--raftery"))
      j["prior"]["raftery"] = f.raftery;
    else
      j["prior"]["raftery"] = false;
    if (passed("--mu0")) j["prior"]["mu0"] = f.mu0;
    if (passed("--lambda0")) j["prior"]["lambda0"] = f.lambda0;
    if (passed("--a0")) j["prior"]["a0"] = f.a0;
    if (passed("--b0")) j["prior"]["b0"] = f.b0;
  }
  if (passed("--alpha")) j["alpha"] = f.alpha;
  if (passed("--alpha-vector"))
    j["alpha_vector"] = parse_double_list(f.alpha_vector, "--alpha-vector");
  if (passed("--gamma-a") || passed("--gamma-b")) {
    if (!j.contains("gamma_prior")) j["gamma_prior"] = json::object();
    if (passed("--gamma-a")) j["gamma_prior"]["a"] = f.gamma_a;
    if (passed("--gamma-b")) j["gamma_prior"]["b"] = f.gamma_b;
  }
  if (passed("--reps")) j["reps"] = f.reps;
  if (passed("--seed")) j["seed"] = f.seed;
  if (passed("--preset")) j["preset"] = f.preset;
  if (passed("--tuning")) j["tuning"] = parse_json_flag(f.tuning, "--tuning");
  if (passed("--workers")) j["workers"] = f.workers;
  if (passed("--reference")) j["reference"] = f.reference;
  if (passed("--out")) j["out"] = f.out;
  return j;
}

int run_model(const CLI::App* sub, const RunFlags& f, const std::string& model) {
  const evidence::harness::RunConfig config =
      evidence::harness::config_from_json(merge_run_config(sub, f, model));
  const evidence::harness::RunOutput out = evidence::harness::run(config);
  if (config.out.empty()) {
    evidence::harness::write_csv(out.records, std::cout);
    return 0;
  }
  double sum = 0.0, sumsq = 0.0;
  long long ok = 0;
  for (const auto& rec : out.records)
    if (std::isfinite(rec.log_evidence)) {
      sum += rec.log_evidence;
      sumsq += rec.log_evidence * rec.log_evidence;
      ++ok;
    }
  std::cout << "wrote " << out.records.size() << " records to " << config.out << '\n';
  if (ok > 0) {
    const double mean = sum / static_cast<double>(ok);
    std::printf("mean log evidence %.6f", mean);
    if (ok > 1) {
      const double var = (sumsq - sum * mean) / static_cast<double>(ok - 1);
      std::printf("  (sd %.6f over %lld finite reps)", std::sqrt(std::max(var, 0.0)), ok);
    }
    std::printf("\n");
  }
  if (ok < static_cast<long long>(out.records.size()))
    std::cout << (out.records.size() - static_cast<std::size_t>(ok))
              << " repetition(s) failed; see tuning_json error fields\n";
  return 0;
}

// --- oracle ----------------------------------------------------------------

struct OracleFlags {
  std::string model = "fm", data, synthetic, alpha_vector;
  int k = 2;
  double scale = 1.0, alpha = 1.0, mu0 = 0, lambda0 = 1, a0 = 1, b0 = 1;
  double gamma_a = 1.0, gamma_b = 1.0;
  bool raftery = true;
};

int run_oracle(const CLI::App* sub, const OracleFlags& f) {
  std::vector<double> y;
  if (!f.data.empty() == !f.synthetic.empty())
    throw evidence::invalid_input("oracle: exactly one of --data and --synthetic is required");
  if (!f.data.empty()) {
    y = evidence::harness::ingest_dataset(f.data);
  } else {
    evidence::harness::SyntheticSpec spec;
    const json sj = parse_json_flag(f.synthetic, "--synthetic");
    json cfg{{"model", "fm"}, {"estimator", "sis"}, {"synthetic", sj}};
    spec = *evidence::harness::config_from_json(cfg).synthetic;
    y = evidence::harness::generate_synthetic(spec).y;
  }
  if (f.scale != 1.0)
    for (double& v : y) v *= f.scale;
  const bool explicit_prior =
      sub->count("--mu0") || sub->count("--lambda0") || sub->count("--a0") || sub->count("--b0");
  evidence::NigPrior prior;
  if (explicit_prior || !f.raftery) {
    prior = {f.mu0, f.lambda0, f.a0, f.b0};
    prior.validate();
  } else {
    prior = evidence::hyperparams_from_data(y);
  }
  double value = 0.0;
  if (f.model == "fm") {
    std::vector<double> alpha = f.alpha_vector.empty()
                                    ? std::vector<double>(static_cast<std::size_t>(f.k), f.alpha)
                                    : parse_double_list(f.alpha_vector, "--alpha-vector");
    value = evidence::oracle::fm_exact_evidence(y, f.k, prior, alpha);
  } else if (f.model == "dpm") {
    value = evidence::oracle::dpm_exact_evidence(y, prior, {f.gamma_a, f.gamma_b});
  } else {
    throw evidence::invalid_input("oracle: model must be 'fm' or 'dpm'");
  }
  const json report{{"model", f.model},
                    {"n", y.size()},
                    {"dataset_checksum", evidence::harness::dataset_checksum(y)},
                    {"log_evidence", value}};
  std::cout << report.dump(2) << '\n';
  return 0;
}

// --- bf-paths --------------------------------------------------------------

struct BfFlags {
  std::string config_path, null_spec, grid, fm_estimator, dpm_estimator;
  std::string fm_tuning, dpm_tuning, out;
  int k0 = 0, datasets = 0, workers = 0;
  double alpha = 0, gamma_a = 0, gamma_b = 0;
  std::uint64_t seed = 0;
};

evidence::harness::BfPathsConfig bf_config_from_json(const json& j) {
  static const std::vector<std::string> allowed{
      "null",     "k0",         "grid",       "datasets", "fm_estimator", "dpm_estimator",
      "fm_tuning", "dpm_tuning", "alpha",     "gamma_prior", "seed",      "workers",
      "out"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw evidence::invalid_input("unknown key '" + key + "' in bf-paths config");
  }
  evidence::harness::BfPathsConfig c;
  if (j.contains("null")) {
    json cfg{{"model", "fm"}, {"estimator", "sis"}, {"synthetic", j.at("null")}};
    c.null_spec = *evidence::harness::config_from_json(cfg).synthetic;
  }
  if (j.contains("k0")) c.k0 = j.at("k0").get<int>();
  if (j.contains("grid")) c.grid = j.at("grid").get<std::vector<long long>>();
  if (j.contains("datasets")) c.datasets = j.at("datasets").get<int>();
  if (j.contains("fm_estimator")) c.fm_estimator = j.at("fm_estimator").get<std::string>();
  if (j.contains("dpm_estimator")) c.dpm_estimator = j.at("dpm_estimator").get<std::string>();
  if (j.contains("fm_tuning")) c.fm_tuning = j.at("fm_tuning");
  if (j.contains("dpm_tuning")) c.dpm_tuning = j.at("dpm_tuning");
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("gamma_prior")) {
    c.gamma_prior.a = j.at("gamma_prior").value("a", c.gamma_prior.a);
    c.gamma_prior.b = j.at("gamma_prior").value("b", c.gamma_prior.b);
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("workers")) c.workers = j.at("workers").get<int>();
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  return c;
}

int run_bf_paths(const CLI::App* sub, const BfFlags& f) {
  json j = load_config(f.config_path);
  if (!j.is_object()) throw evidence::invalid_input("config file must hold a JSON object");
  const auto passed = [sub](const char* name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (passed("--null")) j["null"] = parse_json_flag(f.null_spec, "--null");
  if (passed("--k0")) j["k0"] = f.k0;
  if (passed("--grid")) j["grid"] = parse_int_list(f.grid, "--grid");
  if (passed("--datasets")) j["datasets"] = f.datasets;
  if (passed("--fm-estimator")) j["fm_estimator"] = f.fm_estimator;
  if (passed("--dpm-estimator")) j["dpm_estimator"] = f.dpm_estimator;
  if (passed("--fm-tuning")) j["fm_tuning"] = parse_json_flag(f.fm_tuning, "--fm-tuning");
  if (passed("--dpm-tuning")) j["dpm_tuning"] = parse_json_flag(f.dpm_tuning, "--dpm-tuning");
  if (passed("--alpha")) j["alpha"] = f.alpha;
  if (passed("--gamma-a") || passed("--gamma-b")) {
    if (!j.contains("gamma_prior")) j["gamma_prior"] = json::object();
    if (passed("--gamma-a")) j["gamma_prior"]["a"] = f.gamma_a;
    if (passed("--gamma-b")) j["gamma_prior"]["b"] = f.gamma_b;
  }
  if (passed("--seed")) j["seed"] = f.seed;
  if (passed("--workers")) j["workers"] = f.workers;
  if (passed("--out")) j["out"] = f.out;
  if (!j.contains("null")) {
    // Default null model: a single standard normal component.
    j["null"] = {{"k0", 1}, {"means", {0.0}}, {"sds", {1.0}}, {"weights", {1.0}}};
  }
  const evidence::harness::BfPathsConfig config = bf_config_from_json(j);
  const evidence::harness::BfPathsOutput out = evidence::harness::bf_paths(config);
  long long failed = 0;
  for (const auto& cell : out.cells)
    if (!cell.error.empty()) ++failed;
  std::cout << "datasets " << config.datasets << ", grid";
  for (long long n : config.grid) std::cout << ' ' << n;
  std::cout << '\n';
  for (const auto& [n, frac] : out.fraction_positive)
    std::printf("n=%-6lld fraction(log BF > 0) = %.3f\n", n, frac);
  if (failed > 0) std::cout << failed << " cell(s) failed; see error column\n";
  if (!config.out.empty())
    std::cout << "wrote " << out.cells.size() << " cells to " << config.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marginal-likelihood estimation for conjugate Gaussian mixtures"};
  app.require_subcommand(1);

  RunFlags fm_flags, dpm_flags;
  CLI::App* fm = app.add_subcommand("fm", "finite mixture with K components");
  add_run_flags(fm, fm_flags, true);
  bool list_presets = false;
  fm->add_flag("--list-presets", list_presets, "print preset names and exit");
  CLI::App* dpm = app.add_subcommand("dpm", "Dirichlet process mixture");
  add_run_flags(dpm, dpm_flags, false);

  OracleFlags oracle_flags;
  CLI::App* oracle = app.add_subcommand("oracle", "exact evidence on tiny instances");
  oracle->add_option("--model", oracle_flags.model, "'fm' or 'dpm'");
  oracle->add_option("--k", oracle_flags.k, "components (fm)");
  oracle->add_option("--data", oracle_flags.data, "dataset file");
  oracle->add_option("--synthetic", oracle_flags.synthetic, "synthetic spec JSON");
  oracle->add_option("--scale", oracle_flags.scale, "data scale factor");
  oracle->add_flag("--raftery,!--no-raftery", oracle_flags.raftery,
                   "data-driven hyperparameters (default)");
  oracle->add_option("--mu0", oracle_flags.mu0, "explicit prior mean location");
  oracle->add_option("--lambda0", oracle_flags.lambda0, "explicit prior precision scale");
  oracle->add_option("--a0", oracle_flags.a0, "explicit prior variance shape");
  oracle->add_option("--b0", oracle_flags.b0, "explicit prior variance scale");
  oracle->add_option("--alpha", oracle_flags.alpha, "symmetric Dirichlet parameter (fm)");
  oracle->add_option("--alpha-vector", oracle_flags.alpha_vector, "asymmetric Dirichlet (fm)");
  oracle->add_option("--gamma-a", oracle_flags.gamma_a, "concentration Gamma shape (dpm)");
  oracle->add_option("--gamma-b", oracle_flags.gamma_b, "concentration Gamma rate (dpm)");

  BfFlags bf_flags;
  CLI::App* bf = app.add_subcommand("bf-paths", "Bayes-factor paths along growing n");
  bf->add_option("--config", bf_flags.config_path, "JSON config file; flags override");
  bf->add_option("--null", bf_flags.null_spec, "null-model spec JSON (n ignored)");
  bf->add_option("--k0", bf_flags.k0, "mixture order of the numerator model");
  bf->add_option("--grid", bf_flags.grid, "comma-separated increasing prefix sizes");
  bf->add_option("--datasets", bf_flags.datasets, "number of independent data streams");
  bf->add_option("--fm-estimator", bf_flags.fm_estimator, "numerator estimator id");
  bf->add_option("--dpm-estimator", bf_flags.dpm_estimator, "denominator estimator id");
  bf->add_option("--fm-tuning", bf_flags.fm_tuning, "JSON tuning for the numerator");
  bf->add_option("--dpm-tuning", bf_flags.dpm_tuning, "JSON tuning for the denominator");
  bf->add_option("--alpha", bf_flags.alpha, "symmetric Dirichlet parameter");
  bf->add_option("--gamma-a", bf_flags.gamma_a, "concentration Gamma shape");
  bf->add_option("--gamma-b", bf_flags.gamma_b, "concentration Gamma rate");
  bf->add_option("--seed", bf_flags.seed, "base seed");
  bf->add_option("--workers", bf_flags.workers, "worker threads");
  bf->add_option("--out", bf_flags.out, "cells CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fm->parsed() && list_presets) {
      for (const std::string& name : evidence::harness::preset_names()) std::cout << name << '\n';
      return 0;
    }
    if (fm->parsed()) return run_model(fm, fm_flags, "fm");
    if (dpm->parsed()) return run_model(dpm, dpm_flags, "dpm");
    if (oracle->parsed()) return run_oracle(oracle, oracle_flags);
    if (bf->parsed()) return run_bf_paths(bf, bf_flags);
  } catch (const evidence::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
