#ifndef EVIDENCE_ESTIMATE_HPP
#define EVIDENCE_ESTIMATE_HPP

#include <optional>
#include <string>

#include "json.hpp"

namespace evidence {

// Common carrier for every estimator's output. `tuning` echoes the settings
// actually used plus cheap diagnostics (temperature schedules, iteration
// counts, effective sample sizes, ...). Wall time is stamped by the caller
// that owns the clock (the harness).
struct EvidenceEstimate {
  std::string estimator;
  double log_evidence = 0.0;
  std::optional<double> se_log;
  nlohmann::json tuning = nlohmann::json::object();
  double wall_time_s = 0.0;
};

}  // namespace evidence

#endif
