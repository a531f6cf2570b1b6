#include "evidence/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "evidence/dpm_evidence.hpp"
#include "evidence/errors.hpp"
#include "evidence/fm_evidence.hpp"
#include "evidence/rng.hpp"

namespace evidence::harness {
namespace {

constexpr const char* kLibraryVersion = "0.3.0";
constexpr std::uint64_t kStreamBlock = std::uint64_t{1} << 32;  // per-repetition spacing

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end())
      throw invalid_input("unknown key '" + key + "' in " + where);
  }
}

long long get_ll(const nlohmann::json& j, const char* key, long long fallback) {
  return j.contains(key) ? j.at(key).get<long long>() : fallback;
}
int get_int(const nlohmann::json& j, const char* key, int fallback) {
  return j.contains(key) ? j.at(key).get<int>() : fallback;
}
double get_double(const nlohmann::json& j, const char* key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}
bool get_bool(const nlohmann::json& j, const char* key, bool fallback) {
  return j.contains(key) ? j.at(key).get<bool>() : fallback;
}
std::string get_str(const nlohmann::json& j, const char* key, const std::string& fallback) {
  return j.contains(key) ? j.at(key).get<std::string>() : fallback;
}

// Merge preset tuning with user overrides (user wins), then check keys.
nlohmann::json merged_tuning(const std::string& preset, const std::string& estimator,
                             const nlohmann::json& user) {
  nlohmann::json merged = preset.empty() ? nlohmann::json::object() : preset_tuning(preset, estimator);
  for (const auto& [key, value] : user.items()) merged[key] = value;
  return merged;
}

const std::initializer_list<const char*>& tuning_keys(const std::string& model,
                                                      const std::string& estimator) {
  static const std::initializer_list<const char*> am = {"draws"};
  static const std::initializer_list<const char*> hm = {"sweeps", "burnin", "nw_lag"};
  static const std::initializer_list<const char*> chib = {"sweeps", "burnin", "nw_lag"};
  static const std::initializer_list<const char*> chib_perm = {"sweeps", "burnin", "nw_lag",
                                                               "full", "r"};
  static const std::initializer_list<const char*> chib_part = {"sweeps", "burnin", "nw_lag",
                                                               "min_count"};
  static const std::initializer_list<const char*> bridge = {"t0", "t1", "t2", "burnin",
                                                            "tol", "max_iter"};
  static const std::initializer_list<const char*> smc = {"particles", "moves", "ess_target",
                                                         "bisect_tol"};
  static const std::initializer_list<const char*> sis = {"draws"};
  static const std::initializer_list<const char*> dpm_chib = {"t1", "burnin", "t2", "mstar_rule",
                                                              "m_fixed", "nw_lag"};
  static const std::initializer_list<const char*> rlr = {"t1", "t2", "burnin", "tol", "max_iter"};
  if (model == "fm") {
    if (estimator == "am") return am;
    if (estimator == "hm") return hm;
    if (estimator == "chib") return chib;
    if (estimator == "chib-perm") return chib_perm;
    if (estimator == "chib-partition") return chib_part;
    if (estimator == "bridge") return bridge;
    if (estimator == "smc") return smc;
    if (estimator == "sis") return sis;
  } else if (model == "dpm") {
    if (estimator == "chib") return dpm_chib;
    if (estimator == "rlr-sis" || estimator == "rlr-prior") return rlr;
  }
  throw invalid_input("unknown estimator '" + estimator + "' for model '" + model + "'");
}

EvidenceEstimate dispatch_fm(std::span<const double> data, int k, const NigPrior& prior,
                             std::span<const double> alpha, const std::string& estimator,
                             const nlohmann::json& t, std::uint64_t seed, std::uint64_t stream) {
  using namespace evidence::fm;
  if (estimator == "am") {
    AmOptions o;
    o.draws = get_ll(t, "draws", o.draws);
    o.seed = seed;
    o.stream = stream;
    return arithmetic_mean(data, k, prior, alpha, o);
  }
  if (estimator == "hm") {
    HmOptions o;
    o.sweeps = get_ll(t, "sweeps", o.sweeps);
    o.burnin = get_ll(t, "burnin", o.burnin);
    o.nw_lag = get_int(t, "nw_lag", o.nw_lag);
    o.seed = seed;
    o.stream = stream;
    return harmonic_mean(data, k, prior, alpha, o);
  }
  if (estimator == "chib") {
    ChibOptions o;
    o.sweeps = get_ll(t, "sweeps", o.sweeps);
    o.burnin = get_ll(t, "burnin", o.burnin);
    o.nw_lag = get_int(t, "nw_lag", o.nw_lag);
    o.seed = seed;
    o.stream = stream;
    return chib(data, k, prior, alpha, o);
  }
  if (estimator == "chib-perm") {
    ChibPermOptions o;
    o.sweeps = get_ll(t, "sweeps", o.sweeps);
    o.burnin = get_ll(t, "burnin", o.burnin);
    o.nw_lag = get_int(t, "nw_lag", o.nw_lag);
    o.full = get_bool(t, "full", o.full);
    o.r = get_int(t, "r", o.r);
    o.seed = seed;
    o.stream = stream;
    return chib_permutation(data, k, prior, alpha, o);
  }
  if (estimator == "chib-partition") {
    ChibPartitionOptions o;
    o.sweeps = get_ll(t, "sweeps", o.sweeps);
    o.burnin = get_ll(t, "burnin", o.burnin);
    o.nw_lag = get_int(t, "nw_lag", o.nw_lag);
    o.min_count = get_int(t, "min_count", o.min_count);
    o.seed = seed;
    o.stream = stream;
    return chib_partition(data, k, prior, alpha, o);
  }
  if (estimator == "bridge") {
    BridgeOptions o;
    o.t0 = get_ll(t, "t0", o.t0);
    o.t1 = get_ll(t, "t1", o.t1);
    o.t2 = get_ll(t, "t2", o.t2);
    o.burnin = get_ll(t, "burnin", o.burnin);
    o.tol = get_double(t, "tol", o.tol);
    o.max_iter = get_int(t, "max_iter", o.max_iter);
    o.seed = seed;
    o.stream = stream;
    return bridge_sampling(data, k, prior, alpha, o);
  }
  if (estimator == "smc") {
    SmcOptions o;
    o.particles = get_int(t, "particles", o.particles);
    o.moves = get_int(t, "moves", o.moves);
    o.ess_target = get_double(t, "ess_target", o.ess_target);
    o.bisect_tol = get_double(t, "bisect_tol", o.bisect_tol);
    o.seed = seed;
    o.stream = stream;
    return smc_evidence(data, k, prior, alpha, o);
  }
  if (estimator == "sis") {
    SisOptions o;
    o.draws = get_ll(t, "draws", o.draws);
    o.seed = seed;
    o.stream = stream;
    return sis_evidence(data, k, prior, alpha, o);
  }
  throw invalid_input("unknown fm estimator '" + estimator + "'");
}

EvidenceEstimate dispatch_dpm(std::span<const double> data, const NigPrior& prior,
                              const dpm::GammaPrior& gprior, const std::string& estimator,
                              const nlohmann::json& t, std::uint64_t seed, std::uint64_t stream) {
  using namespace evidence::dpm;
  if (estimator == "chib") {
    ChibDpmOptions o;
    o.t1 = get_ll(t, "t1", o.t1);
    o.burnin = get_ll(t, "burnin", o.burnin);
    o.t2 = get_ll(t, "t2", o.t2);
    const std::string rule = get_str(t, "mstar_rule", "posterior_mean");
    if (rule == "posterior_mean")
      o.mstar_rule = MstarRule::posterior_mean;
    else if (rule == "posterior_median")
      o.mstar_rule = MstarRule::posterior_median;
    else if (rule == "fixed")
      o.mstar_rule = MstarRule::fixed;
    else
      throw invalid_input("chib (dpm): unknown mstar_rule '" + rule + "'");
    o.m_fixed = get_double(t, "m_fixed", o.m_fixed);
    o.nw_lag = get_int(t, "nw_lag", o.nw_lag);
    o.seed = seed;
    o.stream = stream;
    return chib_dpm(data, prior, gprior, o);
  }
  if (estimator == "rlr-sis" || estimator == "rlr-prior") {
    RlrOptions o;
    o.adversarial = estimator == "rlr-sis" ? RlrAdversarial::sis : RlrAdversarial::prior;
    o.t1 = get_ll(t, "t1", o.t1);
    o.t2 = get_ll(t, "t2", o.t2);
    o.burnin = get_ll(t, "burnin", o.burnin);
    o.tol = get_double(t, "tol", o.tol);
    o.max_iter = get_int(t, "max_iter", o.max_iter);
    o.seed = seed;
    o.stream = stream;
    return rlr_evidence(data, prior, gprior, o);
  }
  throw invalid_input("unknown dpm estimator '" + estimator + "'");
}

int resolve_workers(int configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("EVIDENCE_WORKERS")) {
    const int w = std::atoi(env);
    if (w > 0) return w;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(0..count-1) on `workers` threads; any exception is rethrown after
// all workers finish.
template <typename F>
void parallel_for(long long count, int workers, F&& fn) {
  if (count <= 0) return;
  workers = static_cast<int>(std::min<long long>(workers, count));
  if (workers <= 1) {
    for (long long i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<long long> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const long long i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_split(const std::string& line, std::size_t lineno) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) {
    std::ostringstream msg;
    msg << "unterminated quote in CSV line " << lineno;
    throw parse_failure(msg.str());
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (k0 < 1) throw invalid_input("synthetic spec: k0 must be >= 1");
  const std::size_t k = static_cast<std::size_t>(k0);
  if (means.size() != k || sds.size() != k || weights.size() != k)
    throw invalid_input("synthetic spec: means/sds/weights must each have k0 entries");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw invalid_input("synthetic spec: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw invalid_input("synthetic spec: weights must sum to 1");
  for (double s : sds)
    if (!(s > 0.0)) throw invalid_input("synthetic spec: scales must be positive");
  if (n < 0) throw invalid_input("synthetic spec: negative n");
}

void RunConfig::validate() const {
  if (model != "fm" && model != "dpm") throw invalid_input("config: model must be 'fm' or 'dpm'");
  const std::vector<std::string> ids = estimator_ids(model);
  if (std::find(ids.begin(), ids.end(), estimator) == ids.end())
    throw invalid_input("config: unknown estimator '" + estimator + "' for model '" + model + "'");
  if (model == "fm" && k < 1) throw invalid_input("config: k must be >= 1");
  if (data_path.empty() == !synthetic)
    throw invalid_input("config: exactly one of data path and synthetic spec is required");
  if (synthetic) synthetic->validate();
  if (!(scale > 0.0)) throw invalid_input("config: scale must be positive");
  if (!prior.raftery) prior.explicit_prior.validate();
  if (!(alpha > 0.0)) throw invalid_input("config: alpha must be positive");
  if (!alpha_vector.empty()) {
    if (model == "fm" && alpha_vector.size() != static_cast<std::size_t>(k))
      throw invalid_input("config: alpha_vector must have k entries");
    for (double a : alpha_vector)
      if (!(a > 0.0)) throw invalid_input("config: alpha_vector entries must be positive");
  }
  gamma_prior.validate();
  if (reps < 1) throw invalid_input("config: reps must be >= 1");
  if (workers < 0) throw invalid_input("config: workers must be >= 0");
  if (!preset.empty()) {
    const std::vector<std::string> names = preset_names();
    if (std::find(names.begin(), names.end(), preset) == names.end())
      throw invalid_input("config: unknown preset '" + preset + "'");
  }
  reject_unknown_keys(tuning, tuning_keys(model, estimator), "tuning for " + estimator);
}

RunConfig config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"model", "estimator", "k", "data", "synthetic", "scale", "prior", "alpha",
                       "alpha_vector", "gamma_prior", "reps", "seed", "preset", "tuning",
                       "workers", "reference", "out"},
                      "config");
  RunConfig c;
  c.model = get_str(j, "model", c.model);
  c.estimator = get_str(j, "estimator", c.estimator);
  c.k = get_int(j, "k", c.k);
  c.data_path = get_str(j, "data", c.data_path);
  if (j.contains("synthetic")) {
    const nlohmann::json& s = j.at("synthetic");
    reject_unknown_keys(s, {"k0", "means", "sds", "weights", "n", "seed"}, "synthetic spec");
    SyntheticSpec spec;
    spec.k0 = get_int(s, "k0", spec.k0);
    if (s.contains("means")) spec.means = s.at("means").get<std::vector<double>>();
    if (s.contains("sds")) spec.sds = s.at("sds").get<std::vector<double>>();
    if (s.contains("weights")) spec.weights = s.at("weights").get<std::vector<double>>();
    spec.n = get_ll(s, "n", spec.n);
    spec.seed = s.contains("seed") ? s.at("seed").get<std::uint64_t>() : spec.seed;
    c.synthetic = std::move(spec);
  }
  c.scale = get_double(j, "scale", c.scale);
  if (j.contains("prior")) {
    const nlohmann::json& p = j.at("prior");
    reject_unknown_keys(p, {"raftery", "mu0", "lambda0", "a0", "b0"}, "prior spec");
    c.prior.raftery = get_bool(p, "raftery", true);
    c.prior.explicit_prior.mu0 = get_double(p, "mu0", c.prior.explicit_prior.mu0);
    c.prior.explicit_prior.lambda0 = get_double(p, "lambda0", c.prior.explicit_prior.lambda0);
    c.prior.explicit_prior.a0 = get_double(p, "a0", c.prior.explicit_prior.a0);
    c.prior.explicit_prior.b0 = get_double(p, "b0", c.prior.explicit_prior.b0);
  }
  c.alpha = get_double(j, "alpha", c.alpha);
  if (j.contains("alpha_vector")) c.alpha_vector = j.at("alpha_vector").get<std::vector<double>>();
  if (j.contains("gamma_prior")) {
    const nlohmann::json& g = j.at("gamma_prior");
    reject_unknown_keys(g, {"a", "b"}, "gamma prior");
    c.gamma_prior.a = get_double(g, "a", c.gamma_prior.a);
    c.gamma_prior.b = get_double(g, "b", c.gamma_prior.b);
  }
  c.reps = get_int(j, "reps", c.reps);
  c.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : c.seed;
  c.preset = get_str(j, "preset", c.preset);
  if (j.contains("tuning")) c.tuning = j.at("tuning");
  c.workers = get_int(j, "workers", c.workers);
  if (j.contains("reference")) c.reference = j.at("reference").get<double>();
  c.out = get_str(j, "out", c.out);
  c.validate();
  return c;
}

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j{{"model", c.model},
                   {"estimator", c.estimator},
                   {"k", c.k},
                   {"data", c.data_path},
                   {"scale", c.scale},
                   {"prior",
                    {{"raftery", c.prior.raftery},
                     {"mu0", c.prior.explicit_prior.mu0},
                     {"lambda0", c.prior.explicit_prior.lambda0},
                     {"a0", c.prior.explicit_prior.a0},
                     {"b0", c.prior.explicit_prior.b0}}},
                   {"alpha", c.alpha},
                   {"alpha_vector", c.alpha_vector},
                   {"gamma_prior", {{"a", c.gamma_prior.a}, {"b", c.gamma_prior.b}}},
                   {"reps", c.reps},
                   {"seed", c.seed},
                   {"preset", c.preset},
                   {"tuning", c.tuning},
                   {"workers", c.workers},
                   {"out", c.out}};
  if (c.synthetic)
    j["synthetic"] = {{"k0", c.synthetic->k0},    {"means", c.synthetic->means},
                      {"sds", c.synthetic->sds},  {"weights", c.synthetic->weights},
                      {"n", c.synthetic->n},      {"seed", c.synthetic->seed}};
  if (c.reference) j["reference"] = *c.reference;
  return j;
}

// ---------------------------------------------------------------------------
// Data.
// ---------------------------------------------------------------------------

std::vector<double> ingest_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open dataset file: " + path);
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::size_t begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    const std::size_t end = line.find_last_not_of(" \t\r");
    const std::string token = line.substr(begin, end - begin + 1);
    try {
      std::size_t used = 0;
      const double v = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      out.push_back(v);
    } catch (const std::exception&) {
      std::ostringstream msg;
      msg << path << ": cannot parse '" << token << "' as a number at line " << lineno;
      throw parse_failure(msg.str());
    }
  }
  if (out.empty()) throw invalid_input("dataset file is empty: " + path);
  return out;
}

SyntheticDraw generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, 0x5eed);
  std::discrete_distribution<int> comp(spec.weights.begin(), spec.weights.end());
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  SyntheticDraw out;
  out.y.reserve(static_cast<std::size_t>(spec.n));
  out.component.reserve(static_cast<std::size_t>(spec.n));
  out.counts.assign(static_cast<std::size_t>(spec.k0), 0);
  for (long long i = 0; i < spec.n; ++i) {
    const int c = comp(rng);
    out.component.push_back(c);
    ++out.counts[static_cast<std::size_t>(c)];
    out.y.push_back(spec.means[static_cast<std::size_t>(c)] +
                    spec.sds[static_cast<std::size_t>(c)] * stdnorm(rng));
  }
  return out;
}

std::string dataset_checksum(std::span<const double> y) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](const char* s) {
    for (; *s; ++s) {
      h ^= static_cast<unsigned char>(*s);
      h *= 0x100000001b3ULL;
    }
  };
  char buf[64];
  for (double v : y) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", v);
    mix(buf);
  }
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Orchestration.
// ---------------------------------------------------------------------------

namespace {

struct PreparedData {
  std::vector<double> y;
  std::string source;
  nlohmann::json extra = nlohmann::json::object();
};

PreparedData prepare_data(const RunConfig& c) {
  PreparedData d;
  if (c.synthetic) {
    SyntheticDraw draw = generate_synthetic(*c.synthetic);
    d.y = std::move(draw.y);
    d.source = "synthetic";
    d.extra["component_counts"] = draw.counts;
  } else {
    d.y = ingest_dataset(c.data_path);
    d.source = c.data_path;
  }
  if (c.scale != 1.0)
    for (double& v : d.y) v *= c.scale;
  return d;
}

NigPrior resolve_prior(const PriorSpec& spec, std::span<const double> y) {
  return spec.raftery ? hyperparams_from_data(y) : spec.explicit_prior;
}

}  // namespace

RunOutput run(const RunConfig& config) {
  config.validate();
  const PreparedData data = prepare_data(config);
  const NigPrior prior = resolve_prior(config.prior, data.y);
  std::vector<double> alpha = config.alpha_vector;
  if (alpha.empty()) alpha.assign(static_cast<std::size_t>(config.k), config.alpha);
  const nlohmann::json tuning = merged_tuning(config.preset, config.estimator, config.tuning);

  RunOutput out;
  out.records.resize(static_cast<std::size_t>(config.reps));
  const int workers = resolve_workers(config.workers);

  parallel_for(config.reps, workers, [&](long long rep) {
    RunRecord& rec = out.records[static_cast<std::size_t>(rep)];
    rec.estimator = config.estimator;
    rec.seed = config.seed;
    const std::uint64_t stream = static_cast<std::uint64_t>(rep) * kStreamBlock;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      EvidenceEstimate est =
          config.model == "fm"
              ? dispatch_fm(data.y, config.k, prior, alpha, config.estimator, tuning, config.seed,
                            stream)
              : dispatch_dpm(data.y, prior, config.gamma_prior, config.estimator, tuning,
                             config.seed, stream);
      rec.log_evidence = est.log_evidence;
      rec.se_log = est.se_log;
      rec.tuning = std::move(est.tuning);
      rec.tuning["rep"] = rep;
    } catch (const error& e) {
      rec.log_evidence = std::numeric_limits<double>::quiet_NaN();
      rec.tuning = {{"rep", rep}, {"error", e.what()}};
    }
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  out.manifest = {{"library_version", kLibraryVersion},
                  {"config", config_to_json(config)},
                  {"data_source", data.source},
                  {"n", data.y.size()},
                  {"dataset_checksum", dataset_checksum(data.y)},
                  {"prior",
                   {{"mu0", prior.mu0}, {"lambda0", prior.lambda0}, {"a0", prior.a0},
                    {"b0", prior.b0}}},
                  {"tuning", tuning},
                  {"workers", workers}};
  for (const auto& [key, value] : data.extra.items()) out.manifest[key] = value;

  if (!config.out.empty()) {
    std::ofstream csv(config.out);
    if (!csv) throw invalid_input("cannot write results file: " + config.out);
    write_csv(out.records, csv);
    std::ofstream mf(config.out + ".manifest.json");
    if (!mf) throw invalid_input("cannot write manifest next to: " + config.out);
    mf << out.manifest.dump(2) << '\n';
    if (config.reference) {
      std::ofstream mse(config.out + ".mse.csv");
      if (!mse) throw invalid_input("cannot write mse file next to: " + config.out);
      mse << "estimator,rep,wall_time_s,squared_error\n";
      for (std::size_t r = 0; r < out.records.size(); ++r) {
        const RunRecord& rec = out.records[r];
        const double err = rec.log_evidence - *config.reference;
        mse << rec.estimator << ',' << r << ',' << format_double(rec.wall_time_s) << ','
            << format_double(err * err) << '\n';
      }
    }
  }
  return out;
}

void write_csv(const std::vector<RunRecord>& records, std::ostream& os) {
  os << "estimator,log_evidence,se_log,seed,wall_time_s,tuning_json\n";
  for (const RunRecord& r : records) {
    os << r.estimator << ',' << format_double(r.log_evidence) << ','
       << (r.se_log ? format_double(*r.se_log) : std::string()) << ',' << r.seed << ','
       << format_double(r.wall_time_s) << ',' << csv_quote(r.tuning.dump()) << '\n';
  }
}

std::vector<RunRecord> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw parse_failure("results CSV is empty");
  if (line != "estimator,log_evidence,se_log,seed,wall_time_s,tuning_json")
    throw parse_failure("results CSV has an unexpected header: " + line);
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = csv_split(line, lineno);
    if (f.size() != 6) {
      std::ostringstream msg;
      msg << "expected 6 CSV fields at line " << lineno << ", got " << f.size();
      throw parse_failure(msg.str());
    }
    try {
      RunRecord r;
      r.estimator = f[0];
      r.log_evidence = std::stod(f[1]);
      if (!f[2].empty()) r.se_log = std::stod(f[2]);
      r.seed = std::stoull(f[3]);
      r.wall_time_s = std::stod(f[4]);
      r.tuning = f[5].empty() ? nlohmann::json::object() : nlohmann::json::parse(f[5]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "cannot parse results CSV line " << lineno << ": " << e.what();
      throw parse_failure(msg.str());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Presets (published per-instance tuning tables).
// ---------------------------------------------------------------------------

namespace {

nlohmann::json galaxy_preset(int k, const std::string& estimator) {
  // Chains lengthen with k; the sequential-imputation budget interpolates
  // between the published anchors k=3:1000, k=5:6000, k=6:7000, k=8:10000.
  static const std::map<int, long long> sis_draws{{2, 1000},  {3, 1000}, {4, 3500}, {5, 6000},
                                                  {6, 7000},  {7, 8500}, {8, 10000}};
  const long long chain_t = k <= 5 ? 100000 : (k == 6 ? 200000 : (k == 7 ? 250000 : 300000));
  const long long chain_burn = chain_t / 10;
  if (estimator == "chib" || estimator == "chib-partition")
    return {{"sweeps", chain_t}, {"burnin", chain_burn}};
  if (estimator == "chib-perm" && k <= 5)
    return {{"sweeps", 100000}, {"burnin", 10000}, {"full", true}};
  if (estimator == "smc") return {{"particles", 10000}, {"moves", 10}};
  if (estimator == "bridge" && k <= 5)
    return {{"t0", 100}, {"t1", 12000}, {"t2", 12000}, {"burnin", 5000}};
  if (estimator == "sis") return {{"draws", sis_draws.at(k)}};
  if (estimator == "am") return {{"draws", k <= 7 ? 3000000 : 4000000}};
  return nlohmann::json::object();
}

nlohmann::json synth_preset(long long n, int k, const std::string& estimator) {
  if (estimator == "smc") return {{"particles", 20000}, {"moves", 10}};
  if (estimator == "sis") return {{"draws", n == 1000 ? 2000 : 10000}};
  if (estimator == "chib-partition" && n == 1000 && k == 3)
    return {{"sweeps", 100000}, {"burnin", 10000}};
  if (estimator == "bridge" && k == 3)
    return {{"t0", 100}, {"t1", 12000}, {"t2", 12000}, {"burnin", 5000}};
  return nlohmann::json::object();
}

nlohmann::json dpm_preset(int n, const std::string& estimator) {
  const long long t1 = n == 6 ? 30000 : (n == 36 ? 50000 : 100000);
  const long long burn = n == 6 ? 2000 : (n == 36 ? 5000 : 10000);
  if (estimator == "chib") return {{"t1", t1}, {"burnin", burn}, {"t2", 2000}};
  if (estimator == "rlr-sis") return {{"t1", t1}, {"burnin", burn}, {"t2", 2000}};
  if (estimator == "rlr-prior") {
    const long long t2 = n == 6 ? 28000 : (n == 36 ? 45000 : 90000);
    return {{"t1", t1}, {"burnin", burn}, {"t2", t2}};
  }
  return nlohmann::json::object();
}

}  // namespace

nlohmann::json preset_tuning(const std::string& preset, const std::string& estimator) {
  if (preset.rfind("galaxy-k", 0) == 0 && preset.size() == 9) {
    const int k = preset[8] - '0';
    if (k >= 2 && k <= 8) return galaxy_preset(k, estimator);
  }
  if (preset == "synth-n1000-k3") return synth_preset(1000, 3, estimator);
  if (preset == "synth-n1000-k13") return synth_preset(1000, 13, estimator);
  if (preset == "synth-n2000-k3") return synth_preset(2000, 3, estimator);
  if (preset == "synth-n2000-k13") return synth_preset(2000, 13, estimator);
  if (preset == "dpm-n6") return dpm_preset(6, estimator);
  if (preset == "dpm-n36") return dpm_preset(36, estimator);
  if (preset == "dpm-n82") return dpm_preset(82, estimator);
  throw invalid_input("unknown preset '" + preset + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (int k = 2; k <= 8; ++k) names.push_back("galaxy-k" + std::to_string(k));
  names.insert(names.end(), {"synth-n1000-k3", "synth-n1000-k13", "synth-n2000-k3",
                             "synth-n2000-k13", "dpm-n6", "dpm-n36", "dpm-n82"});
  return names;
}

std::vector<std::string> estimator_ids(const std::string& model) {
  if (model == "fm")
    return {"am", "hm", "chib", "chib-perm", "chib-partition", "bridge", "smc", "sis"};
  if (model == "dpm") return {"chib", "rlr-sis", "rlr-prior"};
  throw invalid_input("unknown model '" + model + "'");
}

// ---------------------------------------------------------------------------
// Bayes-factor path study.
// ---------------------------------------------------------------------------

void BfPathsConfig::validate() const {
  null_spec.validate();
  if (k0 < 1) throw invalid_input("bf_paths: k0 must be >= 1");
  if (grid.empty()) throw invalid_input("bf_paths: empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 2) throw invalid_input("bf_paths: grid sizes must be >= 2");
    if (i > 0 && grid[i] <= grid[i - 1]) throw invalid_input("bf_paths: grid must be increasing");
  }
  if (datasets < 1) throw invalid_input("bf_paths: need at least one dataset");
  if (!(alpha > 0.0)) throw invalid_input("bf_paths: alpha must be positive");
  gamma_prior.validate();
  const std::vector<std::string> fm_ids = estimator_ids("fm");
  if (std::find(fm_ids.begin(), fm_ids.end(), fm_estimator) == fm_ids.end())
    throw invalid_input("bf_paths: unknown fm estimator '" + fm_estimator + "'");
  const std::vector<std::string> dpm_ids = estimator_ids("dpm");
  if (std::find(dpm_ids.begin(), dpm_ids.end(), dpm_estimator) == dpm_ids.end())
    throw invalid_input("bf_paths: unknown dpm estimator '" + dpm_estimator + "'");
  reject_unknown_keys(fm_tuning, tuning_keys("fm", fm_estimator), "bf_paths fm tuning");
  reject_unknown_keys(dpm_tuning, tuning_keys("dpm", dpm_estimator), "bf_paths dpm tuning");
  if (workers < 0) throw invalid_input("bf_paths: workers must be >= 0");
}

BfPathsOutput bf_paths(const BfPathsConfig& config) {
  config.validate();
  const long long n_max = config.grid.back();
  const std::size_t n_grid = config.grid.size();

  // One draw stream per dataset; grid sizes analyze nested prefixes.
  std::vector<std::vector<double>> streams(static_cast<std::size_t>(config.datasets));
  for (int d = 0; d < config.datasets; ++d) {
    SyntheticSpec spec = config.null_spec;
    spec.n = n_max;
    spec.seed = config.seed + static_cast<std::uint64_t>(d);
    streams[static_cast<std::size_t>(d)] = generate_synthetic(spec).y;
  }

  BfPathsOutput out;
  out.cells.resize(static_cast<std::size_t>(config.datasets) * n_grid);
  const std::vector<double> alpha(static_cast<std::size_t>(config.k0), config.alpha);
  const int workers = resolve_workers(config.workers);

  parallel_for(static_cast<long long>(out.cells.size()), workers, [&](long long cell) {
    const int d = static_cast<int>(cell / static_cast<long long>(n_grid));
    const std::size_t g = static_cast<std::size_t>(cell % static_cast<long long>(n_grid));
    BfCell& c = out.cells[static_cast<std::size_t>(cell)];
    c.dataset = d;
    c.n = config.grid[g];
    const std::span<const double> prefix(streams[static_cast<std::size_t>(d)].data(),
                                         static_cast<std::size_t>(c.n));
    try {
      const NigPrior prior = hyperparams_from_data(prefix);
      const std::uint64_t fm_stream = static_cast<std::uint64_t>(2 * cell) * kStreamBlock;
      const std::uint64_t dpm_stream = static_cast<std::uint64_t>(2 * cell + 1) * kStreamBlock;
      c.log_fm = dispatch_fm(prefix, config.k0, prior, alpha, config.fm_estimator,
                             config.fm_tuning, config.seed, fm_stream)
                     .log_evidence;
      c.log_dpm = dispatch_dpm(prefix, prior, config.gamma_prior, config.dpm_estimator,
                               config.dpm_tuning, config.seed, dpm_stream)
                      .log_evidence;
      c.log_bf = c.log_fm - c.log_dpm;
    } catch (const error& e) {
      c.error = e.what();
    }
  });

  for (std::size_t g = 0; g < n_grid; ++g) {
    long long positive = 0;
    for (int d = 0; d < config.datasets; ++d) {
      const BfCell& c = out.cells[static_cast<std::size_t>(d) * n_grid + g];
      if (c.error.empty() && c.log_bf > 0.0) ++positive;
    }
    out.fraction_positive[config.grid[g]] =
        static_cast<double>(positive) / static_cast<double>(config.datasets);
  }

  out.manifest = {{"library_version", kLibraryVersion},
                  {"k0", config.k0},
                  {"datasets", config.datasets},
                  {"grid", config.grid},
                  {"fm_estimator", config.fm_estimator},
                  {"dpm_estimator", config.dpm_estimator},
                  {"fm_tuning", config.fm_tuning},
                  {"dpm_tuning", config.dpm_tuning},
                  {"alpha", config.alpha},
                  {"gamma_prior", {{"a", config.gamma_prior.a}, {"b", config.gamma_prior.b}}},
                  {"seed", config.seed},
                  {"workers", workers}};

  if (!config.out.empty()) {
    std::ofstream csv(config.out);
    if (!csv) throw invalid_input("cannot write results file: " + config.out);
    csv << "dataset,n,log_fm,log_dpm,log_bf,error\n";
    for (const BfCell& c : out.cells)
      csv << c.dataset << ',' << c.n << ',' << format_double(c.log_fm) << ','
          << format_double(c.log_dpm) << ',' << format_double(c.log_bf) << ','
          << csv_quote(c.error) << '\n';
    std::ofstream mf(config.out + ".manifest.json");
    if (!mf) throw invalid_input("cannot write manifest next to: " + config.out);
    nlohmann::json fractions = nlohmann::json::object();
    for (const auto& [n, frac] : out.fraction_positive) fractions[std::to_string(n)] = frac;
    nlohmann::json manifest = out.manifest;
    manifest["fraction_positive"] = fractions;
    mf << manifest.dump(2) << '\n';
  }
  return out;
}

}  // namespace evidence::harness
