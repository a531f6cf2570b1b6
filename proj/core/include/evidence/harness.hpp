#ifndef EVIDENCE_HARNESS_HPP
#define EVIDENCE_HARNESS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "evidence/conjugate.hpp"
#include "evidence/dpm_model.hpp"
#include "evidence/estimate.hpp"

// Experiment orchestration: dataset ingestion, synthetic generation,
// configuration (JSON config file + flag overrides), repetition fan-out over
// a worker pool with per-repetition RNG substreams, CSV/manifest output, and
// the Bayes-factor path study.

namespace evidence::harness {

struct SyntheticSpec {
  int k0 = 1;
  std::vector<double> means;
  std::vector<double> sds;
  std::vector<double> weights;
  long long n = 0;
  std::uint64_t seed = 0;
  void validate() const;
};

struct PriorSpec {
  bool raftery = true;   // data-driven rule; else the explicit values below
  NigPrior explicit_prior;
};

struct RunConfig {
  std::string model;        // "fm" | "dpm"
  std::string estimator;    // see estimator_ids()
  int k = 2;                // fm only
  std::string data_path;    // mutually exclusive with `synthetic`
  std::optional<SyntheticSpec> synthetic;
  double scale = 1.0;       // multiplies ingested data; recorded
  PriorSpec prior;
  double alpha = 1.0;                    // symmetric Dirichlet weight prior (fm)
  std::vector<double> alpha_vector;      // optional asymmetric override (fm)
  dpm::GammaPrior gamma_prior{1.0, 1.0}; // concentration prior (dpm)
  int reps = 1;
  std::uint64_t seed = 0;
  std::string preset;                    // tuning preset name, e.g. "galaxy-k5"
  nlohmann::json tuning = nlohmann::json::object();  // per-estimator overrides
  int workers = 0;                       // 0: flag/env/hardware default
  std::optional<double> reference;       // when set, squared-error output is emitted
  std::string out;                       // CSV path; empty: no files written
  void validate() const;
};

// Strict parser: unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);

// One decimal number per line; '#' starts a comment; blank lines ignored.
std::vector<double> ingest_dataset(const std::string& path);

struct SyntheticDraw {
  std::vector<double> y;
  std::vector<int> component;
  std::vector<long long> counts;  // per mixture component
};
SyntheticDraw generate_synthetic(const SyntheticSpec& spec);

// FNV-1a over a canonical decimal rendering of the (scaled) data.
std::string dataset_checksum(std::span<const double> y);

struct RunRecord {
  std::string estimator;
  double log_evidence = 0.0;
  std::optional<double> se_log;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;
  nlohmann::json tuning = nlohmann::json::object();
};

struct RunOutput {
  std::vector<RunRecord> records;
  nlohmann::json manifest;
};

// Executes config.reps repetitions (substream = repetition index) across the
// worker pool; records appear in repetition order regardless of worker count.
// Per-repetition estimator failures are recorded in the row's tuning map and
// do not abort siblings. When config.out is set, writes `out`,
// `out`.manifest.json and (with a reference) `out`.mse.csv.
RunOutput run(const RunConfig& config);

// CSV with fixed header estimator,log_evidence,se_log,seed,wall_time_s,tuning_json
void write_csv(const std::vector<RunRecord>& records, std::ostream& os);
std::vector<RunRecord> read_csv(std::istream& is);

// Tuning presets named after the published parameter tables
// (galaxy-k3..galaxy-k8, synth-n1000-k3, ..., dpm-n6/n36/n82). Returns an
// empty object when the preset does not cover the estimator.
nlohmann::json preset_tuning(const std::string& preset, const std::string& estimator);
std::vector<std::string> preset_names();
std::vector<std::string> estimator_ids(const std::string& model);

struct BfPathsConfig {
  SyntheticSpec null_spec;        // data-generating process (n ignored; grid rules)
  int k0 = 1;                     // mixture order of the numerator model
  std::vector<long long> grid;    // increasing prefix sizes
  int datasets = 100;
  std::string fm_estimator = "sis";
  std::string dpm_estimator = "rlr-sis";
  nlohmann::json fm_tuning = nlohmann::json::object();
  nlohmann::json dpm_tuning = nlohmann::json::object();
  double alpha = 1.0;
  dpm::GammaPrior gamma_prior{1.0, 1.0};
  std::uint64_t seed = 0;
  int workers = 0;
  std::string out;
  void validate() const;
};

struct BfCell {
  int dataset = 0;
  long long n = 0;
  double log_fm = 0.0;
  double log_dpm = 0.0;
  double log_bf = 0.0;  // log_fm - log_dpm
  std::string error;    // nonempty when either side failed
};

struct BfPathsOutput {
  std::vector<BfCell> cells;
  std::map<long long, double> fraction_positive;  // per grid size
  nlohmann::json manifest;
};

// For each dataset d, one stream of draws from the null model; each grid size
// analyzes the length-n prefix (nested paths). Hyperparameters follow the
// data-driven rule per prefix. Cells run on the worker pool; failures are
// recorded per cell.
BfPathsOutput bf_paths(const BfPathsConfig& config);

}  // namespace evidence::harness

#endif
