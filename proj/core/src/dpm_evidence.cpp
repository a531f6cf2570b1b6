#include "evidence/dpm_evidence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "evidence/dists.hpp"
#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"
#include "evidence/partitions.hpp"

namespace evidence::dpm {
namespace {

// Newey-West + delta-method se of log(mean(exp(logv))) for a correlated chain.
double nw_delta_se_log(std::span<const double> logv, int lag) {
  const std::size_t t = logv.size();
  const int q = lag >= 0 ? lag : stats::newey_west_default_lag(t);
  const double mx = *std::max_element(logv.begin(), logv.end());
  if (!std::isfinite(mx)) return std::numeric_limits<double>::infinity();
  std::vector<double> v(t);
  double mean = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    v[i] = std::exp(logv[i] - mx);
    mean += v[i];
  }
  mean /= static_cast<double>(t);
  return stats::delta_method_se_log(mean, stats::newey_west_variance(v, q));
}

// log of the exact conditional density p(M | eta, K+): the two-Gamma mixture
// with omega = (a + K+ - 1) / (n (b - log eta) + a + K+ - 1).
double log_m_conditional(double m, double eta, int kplus, long long n, const GammaPrior& g) {
  const double rate = g.b - std::log(eta);
  const double shape_hi = g.a + static_cast<double>(kplus);
  const double omega = (shape_hi - 1.0) / (static_cast<double>(n) * rate + shape_hi - 1.0);
  return stats::log_add_exp(std::log(omega) + log_gamma_pdf(m, shape_hi, rate),
                            std::log1p(-omega) + log_gamma_pdf(m, shape_hi - 1.0, rate));
}

}  // namespace

EvidenceEstimate chib_dpm(std::span<const double> data, const NigPrior& prior,
                          const GammaPrior& gprior, const ChibDpmOptions& opt) {
  prior.validate();
  gprior.validate();
  if (opt.t1 < 100 || opt.t2 < 100) throw invalid_input("chib_dpm: t1 and t2 must be >= 100");
  const long long n = static_cast<long long>(data.size());

  DpmChainOptions copt;
  copt.sweeps = opt.t1;
  copt.burnin = opt.burnin;
  copt.seed = opt.seed;
  copt.stream = opt.stream;
  const DpmChain chain = dpm_run_chain(data, prior, gprior, copt);

  double mstar = opt.m_fixed;
  std::string rule = "fixed";
  if (opt.mstar_rule == MstarRule::posterior_mean) {
    rule = "posterior_mean";
    mstar = 0.0;
    for (double m : chain.m_trace) mstar += m;
    mstar /= static_cast<double>(chain.m_trace.size());
  } else if (opt.mstar_rule == MstarRule::posterior_median) {
    rule = "posterior_median";
    std::vector<double> sorted = chain.m_trace;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long long>(sorted.size()) / 2,
                     sorted.end());
    mstar = sorted[sorted.size() / 2];
  }
  if (!(mstar > 0.0)) throw invalid_input("chib_dpm: candidate concentration must be positive");

  // Rao-Blackwell posterior ordinate at M*.
  std::vector<double> ord(chain.m_trace.size());
  for (std::size_t t = 0; t < ord.size(); ++t)
    ord[t] = log_m_conditional(mstar, chain.eta_trace[t], chain.kplus_trace[t], n, gprior);
  const double log_post_ord = stats::log_mean_exp(ord);
  if (!std::isfinite(log_post_ord)) {
    std::ostringstream msg;
    msg << "chib_dpm: posterior ordinate underflows at M* = " << mstar
        << "; pick a candidate with higher posterior density";
    throw degenerate_estimate(msg.str());
  }
  const double se_ord = nw_delta_se_log(ord, opt.nw_lag);

  // Likelihood ordinate from independent sequential imputations at M*.
  const PredictiveTable pred(prior, n);
  std::vector<double> logw(static_cast<std::size_t>(opt.t2));
  for (long long q = 0; q < opt.t2; ++q) {
    Rng rng = make_rng(opt.seed, opt.stream + 1 + static_cast<std::uint64_t>(q));
    logw[static_cast<std::size_t>(q)] = dpm_sis_impute(data, mstar, pred, rng).log_weight;
  }
  const double log_lik_ord = stats::log_mean_exp(logw);
  const double se_sis = stats::se_log_mean_exp(logw);

  EvidenceEstimate est;
  est.estimator = "chib";
  est.log_evidence = log_lik_ord + log_gamma_pdf(mstar, gprior.a, gprior.b) - log_post_ord;
  est.se_log = std::sqrt(se_sis * se_sis + se_ord * se_ord);
  est.tuning = {{"t1", opt.t1}, {"burnin", opt.burnin}, {"t2", opt.t2},
                {"mstar", mstar}, {"mstar_rule", rule},
                {"nw_lag", opt.nw_lag >= 0 ? opt.nw_lag : stats::newey_west_default_lag(ord.size())},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Reverse logistic regression.
// ---------------------------------------------------------------------------
namespace {

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

}  // namespace

RlrSolution rlr_solve(std::span<const RlrSample> samples, double t2_eff, double tol,
                      int max_iter) {
  long long t1 = 0, t2 = 0;
  for (const RlrSample& s : samples) {
    if (!std::isfinite(s.log_pi1) || !std::isfinite(s.log_pi2_tilde))
      throw invalid_input("rlr_solve: non-finite sample densities");
    (s.source == RlrSample::Source::adversarial ? t1 : t2) += 1;
  }
  if (t1 < 1 || t2 < 1) throw invalid_input("rlr_solve: need samples from both populations");
  if (!(t2_eff >= 1.0)) throw invalid_input("rlr_solve: effective posterior size must be >= 1");

  // u_i(eta) = log T1 + log pi1 - log T2 - log pi2~ + eta; the membership
  // quasi-likelihood l(eta) = sum_adv log sigma(u) + sum_post log sigma(-u)
  // has l'(eta) = sum_adv sigma(-u) - sum_post sigma(u), strictly decreasing.
  const double log_ratio = std::log(static_cast<double>(t1)) - std::log(static_cast<double>(t2));
  std::vector<double> base_adv, base_post;
  base_adv.reserve(static_cast<std::size_t>(t1));
  base_post.reserve(static_cast<std::size_t>(t2));
  for (const RlrSample& s : samples) {
    const double b = log_ratio + s.log_pi1 - s.log_pi2_tilde;
    (s.source == RlrSample::Source::adversarial ? base_adv : base_post).push_back(b);
  }

  const auto score = [&](double eta) {
    double g = 0.0;
    for (double b : base_adv) g += sigmoid(-(b + eta));
    for (double b : base_post) g -= sigmoid(b + eta);
    return g;
  };

  // Bracket from the two one-sided importance-sampling estimates.
  std::vector<double> tmp(base_adv.size());
  for (std::size_t i = 0; i < base_adv.size(); ++i) tmp[i] = -(base_adv[i] - log_ratio);
  const double is_forward = stats::log_mean_exp(tmp);
  tmp.resize(base_post.size());
  for (std::size_t i = 0; i < base_post.size(); ++i) tmp[i] = base_post[i] - log_ratio;
  const double is_reverse = -stats::log_mean_exp(tmp);

  double lo = std::min(is_forward, is_reverse) - 10.0;
  double hi = std::max(is_forward, is_reverse) + 10.0;
  int grow = 0;
  while ((score(lo) <= 0.0 || score(hi) >= 0.0) && grow < 6) {
    lo -= 10.0;
    hi += 10.0;
    ++grow;
  }
  if (score(lo) <= 0.0 || score(hi) >= 0.0) {
    std::ostringstream msg;
    msg << "rlr_solve: no sign change for the score inside [" << lo << ", " << hi
        << "]; one-sided estimates " << is_forward << " (forward IS) and " << is_reverse
        << " (reciprocal IS)";
    throw convergence_failure(msg.str());
  }

  double eta = 0.5 * (is_forward + is_reverse);
  if (eta <= lo || eta >= hi) eta = 0.5 * (lo + hi);
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    const double g = score(eta);
    if (g > 0.0)
      lo = eta;
    else
      hi = eta;
    double curv = 0.0;
    for (double b : base_adv) {
      const double s = sigmoid(b + eta);
      curv -= s * (1.0 - s);
    }
    for (double b : base_post) {
      const double s = sigmoid(b + eta);
      curv -= s * (1.0 - s);
    }
    double next = curv < 0.0 ? eta - g / curv : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(next) || next <= lo || next >= hi) next = 0.5 * (lo + hi);
    const double step = std::abs(next - eta);
    eta = next;
    if (step < tol) break;
  }
  if (iter >= max_iter)
    throw convergence_failure("rlr_solve: Newton iteration did not converge");

  // Optimal-bridge variance: Var(f2)/(T1 mean(f2)^2) + Var(f1)/(T2eff mean(f1)^2)
  // with f2 = gamma2 on the adversarial set, f1 = gamma1 on the posterior set.
  double m2 = 0.0, m1 = 0.0;
  for (double b : base_adv) m2 += sigmoid(-(b + eta));
  for (double b : base_post) m1 += sigmoid(b + eta);
  m2 /= static_cast<double>(t1);
  m1 /= static_cast<double>(t2);
  double v2 = 0.0, v1 = 0.0;
  for (double b : base_adv) {
    const double d = sigmoid(-(b + eta)) - m2;
    v2 += d * d;
  }
  for (double b : base_post) {
    const double d = sigmoid(b + eta) - m1;
    v1 += d * d;
  }
  v2 /= static_cast<double>(std::max<long long>(t1 - 1, 1));
  v1 /= static_cast<double>(std::max<long long>(t2 - 1, 1));

  RlrSolution sol;
  sol.log_c2 = eta;
  sol.se_log = std::sqrt(v2 / (static_cast<double>(t1) * m2 * m2) + v1 / (t2_eff * m1 * m1));
  sol.iterations = iter + 1;
  sol.is_forward = is_forward;
  sol.is_reverse = is_reverse;
  return sol;
}

EvidenceEstimate rlr_evidence(std::span<const double> data, const NigPrior& prior,
                              const GammaPrior& gprior, const RlrOptions& opt) {
  prior.validate();
  gprior.validate();
  if (opt.t1 < 100 || opt.t2 < 100) throw invalid_input("rlr_evidence: t1 and t2 must be >= 100");
  const long long n = static_cast<long long>(data.size());
  const PredictiveTable pred(prior, n);
  const bool sis_mode = opt.adversarial == RlrAdversarial::sis;

  std::vector<RlrSample> samples;
  samples.reserve(static_cast<std::size_t>(opt.t1 + opt.t2));

  // Adversarial draws: M from its Gamma prior, allocation from either the
  // sequential-imputation proposal at that M or the prior urn.
  for (long long t = 0; t < opt.t1; ++t) {
    Rng rng = make_rng(opt.seed, opt.stream + 1 + static_cast<std::uint64_t>(t));
    const double m = sample_gamma_shape_rate(rng, gprior.a, gprior.b);
    const double log_pm = log_gamma_pdf(m, gprior.a, gprior.b);
    RlrSample s;
    s.source = RlrSample::Source::adversarial;
    if (sis_mode) {
      const DpmSisResult imp = dpm_sis_impute(data, m, pred, rng);
      s.log_pi1 = log_pm + imp.log_proposal;
      // pi2~ = p(y|z) pi(z|M) pi(M) = pi1 * (SIS weight)
      s.log_pi2_tilde = s.log_pi1 + imp.log_weight;
    } else {
      const std::vector<int> z = dpm_sample_urn(static_cast<int>(n), m, rng);
      s.log_pi1 = log_pm + dpm_log_prior_z(z, m);
      s.log_pi2_tilde = s.log_pi1 + dpm_log_likelihood_z(z, data, prior);
    }
    samples.push_back(s);
  }

  // Posterior draws from the collapsed chain.
  DpmChainOptions copt;
  copt.sweeps = opt.t2;
  copt.burnin = opt.burnin;
  copt.seed = opt.seed;
  copt.stream = opt.stream;
  copt.store_allocs = true;
  const DpmChain chain = dpm_run_chain(data, prior, gprior, copt);
  std::vector<double> post_log_pi2(static_cast<std::size_t>(opt.t2));
  for (long long t = 0; t < opt.t2; ++t) {
    const std::vector<int>& z = chain.allocs[static_cast<std::size_t>(t)];
    const double m = chain.m_trace[static_cast<std::size_t>(t)];
    const double log_pm = log_gamma_pdf(m, gprior.a, gprior.b);
    RlrSample s;
    s.source = RlrSample::Source::posterior;
    s.log_pi2_tilde = log_pm + dpm_log_prior_z(z, m) + dpm_log_likelihood_z(z, data, prior);
    s.log_pi1 = sis_mode ? log_pm + dpm_sis_log_proposal(data, z, m, prior)
                         : log_pm + dpm_log_prior_z(z, m);
    samples.push_back(s);
    post_log_pi2[static_cast<std::size_t>(t)] = s.log_pi2_tilde;
  }

  const double t2_eff = stats::ess_batch_means(post_log_pi2);
  const RlrSolution sol = rlr_solve(samples, t2_eff, opt.tol, opt.max_iter);

  EvidenceEstimate est;
  est.estimator = sis_mode ? "rlr-sis" : "rlr-prior";
  est.log_evidence = sol.log_c2;
  est.se_log = sol.se_log;
  est.tuning = {{"adversarial", sis_mode ? "sis" : "prior"},
                {"t1", opt.t1}, {"t2", opt.t2}, {"burnin", opt.burnin},
                {"iterations", sol.iterations}, {"t2_eff", t2_eff},
                {"is_forward", sol.is_forward}, {"is_reverse", sol.is_reverse},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

}  // namespace evidence::dpm
