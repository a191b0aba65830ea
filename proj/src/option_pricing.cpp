#include "fastvol/option_pricing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fastvol/errors.hpp"
#include "fastvol/rng.hpp"
#include "fastvol/threading.hpp"

namespace fastvol {

namespace {

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

void check_bs_inputs(double S0, double K, double maturity, double vol) {
  if (!(S0 > 0) || !(K > 0) || !(maturity > 0) || !(vol > 0))
    fail(ErrorCode::DomainError, "Black-Scholes needs positive spot, strike, maturity, vol");
}

}  // namespace

RateEvaluator1d make_rate_evaluator(std::shared_ptr<const EffectiveLagrangian> L, double x0,
                                    double t, int segments, int restarts, std::uint64_t seed) {
  if (L->hamiltonian().model().n != 1)
    fail(ErrorCode::DomainError, "rate evaluator supports n = 1");
  RateEvaluator1d ev;
  ev.x0 = x0;
  ev.t = t;
  ev.x_independent = L->hamiltonian().model().sigma_x_independent;
  ev.nu_hat = L->nu_hat();
  ev.c_hat = L->c_hat();
  if (ev.x_independent) {
    ev.I = [L, x0, t](double y) { return t * L->value1d(0.0, (y - x0) / t); };
  } else {
    ev.I = [L, x0, t, segments, restarts, seed](double y) {
      std::vector<double> a{x0}, b{y};
      return rate_general(*L, a, b, t, segments, restarts, seed).value;
    };
  }
  return ev;
}

double otm_price_decay(const RateEvaluator1d& rate, const OptionSpec& spec) {
  if (!(spec.S0 > 0) || !(spec.K > 0)) fail(ErrorCode::DomainError, "need positive spot and strike");
  const double logK = std::log(spec.K);
  const double x0 = rate.x0;
  if (std::abs(std::log(spec.S0) - x0) > 1e-9)
    fail(ErrorCode::DomainError, "rate evaluator was built at a different log-spot");
  if (spec.call && !(spec.S0 < spec.K))
    fail(ErrorCode::NotOTM, "call requires S0 < K for the short-maturity asymptotics");
  if (!spec.call && !(spec.S0 > spec.K))
    fail(ErrorCode::NotOTM, "put requires S0 > K for the short-maturity asymptotics");

  if (rate.x_independent) return -rate.I(logK);  // monotone beyond the boundary

  // grid infimum over (logK, logK + radius] (mirrored for puts)
  double base = std::max(rate.I(logK), 1e-2);
  double radius = 6.0 * std::sqrt(4.0 * std::max(rate.c_hat, 1e-8) * rate.t * base);
  const int pts = 257;
  double lo = spec.call ? logK : logK - radius;
  double hi = spec.call ? logK + radius : logK;
  double best = std::numeric_limits<double>::infinity(), besty = logK;
  for (int level = 0; level < 3; ++level) {
    double spacing = (hi - lo) / (pts - 1);
    for (int i = 0; i < pts; ++i) {
      double y = lo + spacing * i;
      double v = rate.I(y);
      if (v < best) {
        best = v;
        besty = y;
      }
    }
    lo = std::max(spec.call ? logK : lo, besty - 2.5 * spacing);
    hi = std::min(spec.call ? hi : logK, besty + 2.5 * spacing);
  }
  return -best;
}

double implied_vol_limit(const RateEvaluator1d& rate, const OptionSpec& spec) {
  const double logK = std::log(spec.K);
  double inf_rate = -otm_price_decay(rate, spec);
  if (!(inf_rate > 1e-12 * std::max(1.0, (logK - rate.x0) * (logK - rate.x0))))
    fail(ErrorCode::DegenerateRate,
         "rate infimum is not positive; the rate solver must have failed");
  double d = logK - rate.x0;
  return d * d / (2.0 * inf_rate * rate.t);
}

double black_scholes_call(double S0, double K, double maturity, double vol, double r) {
  check_bs_inputs(S0, K, maturity, vol);
  double sq = vol * std::sqrt(maturity);
  double d1 = (std::log(S0 / K) + (r + 0.5 * vol * vol) * maturity) / sq;
  double d2 = d1 - sq;
  return S0 * norm_cdf(d1) - K * std::exp(-r * maturity) * norm_cdf(d2);
}

double black_scholes_put(double S0, double K, double maturity, double vol, double r) {
  check_bs_inputs(S0, K, maturity, vol);
  double sq = vol * std::sqrt(maturity);
  double d1 = (std::log(S0 / K) + (r + 0.5 * vol * vol) * maturity) / sq;
  double d2 = d1 - sq;
  return K * std::exp(-r * maturity) * norm_cdf(-d2) - S0 * norm_cdf(-d1);
}

double implied_vol_invert(double price, double S0, double K, double maturity, double r) {
  if (!(S0 > 0) || !(K > 0) || !(maturity > 0))
    fail(ErrorCode::DomainError, "need positive spot, strike, maturity");
  double lower = std::max(0.0, S0 - K * std::exp(-r * maturity));
  if (!(price > lower) || !(price < S0))
    fail(ErrorCode::OutOfBounds, "price violates the no-arbitrage bounds (" +
                                     std::to_string(lower) + ", " + std::to_string(S0) + ")");

  double lo = 1e-9, hi = 1.0;
  for (int i = 0; i < 64 && black_scholes_call(S0, K, maturity, hi, r) < price; ++i) hi *= 2;
  const double tol = 1e-12 * S0;
  double mid = 0.5 * (lo + hi);
  for (int i = 0; i < 200; ++i) {
    mid = 0.5 * (lo + hi);
    double v = black_scholes_call(S0, K, maturity, mid, r);
    if (std::abs(v - price) <= tol || hi - lo < 1e-15 * std::max(1.0, mid)) break;
    if (v > price)
      hi = mid;
    else
      lo = mid;
  }
  // Newton polish with the analytic vega
  double vol = mid;
  for (int i = 0; i < 12; ++i) {
    double sq = vol * std::sqrt(maturity);
    double d1 = (std::log(S0 / K) + (r + 0.5 * vol * vol) * maturity) / sq;
    double vega = S0 * norm_pdf(d1) * std::sqrt(maturity);
    double diff = black_scholes_call(S0, K, maturity, vol, r) - price;
    if (std::abs(diff) <= tol) break;
    if (!(vega > 1e-300)) break;
    double next = vol - diff / vega;
    if (!(next > 0)) break;
    vol = next;
  }
  if (std::abs(black_scholes_call(S0, K, maturity, vol, r) - price) >
      std::abs(black_scholes_call(S0, K, maturity, mid, r) - price))
    vol = mid;
  return vol;
}

SmileReport mc_smile(const VolatilityModel& model, double alpha, const OptionSpec& spec,
                     const RateEvaluator1d& rate, std::span<const double> eps_list, long n_paths,
                     std::uint64_t seed, int threads) {
  if (model.n != 1) fail(ErrorCode::DomainError, "mc_smile supports n = 1");
  if (eps_list.size() < 1) fail(ErrorCode::DomainError, "need at least one epsilon");
  for (std::size_t i = 1; i < eps_list.size(); ++i)
    if (!(eps_list[i] < eps_list[i - 1]))
      fail(ErrorCode::DomainError, "eps list must be strictly decreasing");
  if (spec.call && !(spec.S0 < spec.K)) fail(ErrorCode::NotOTM, "call requires S0 < K");
  if (!spec.call && !(spec.S0 > spec.K)) fail(ErrorCode::NotOTM, "put requires S0 > K");

  SmileReport rep;
  rep.target_sigma2 = implied_vol_limit(rate, spec);

  const double x0 = std::log(spec.S0);
  for (std::size_t e = 0; e < eps_list.size(); ++e) {
    SimConfig cfg;
    cfg.epsilon = eps_list[e];
    cfg.alpha = alpha;
    cfg.t = spec.t;
    cfg.dt = default_dt(cfg.epsilon, alpha, spec.t);
    cfg.n_paths = n_paths;
    std::uint64_t st = seed ^ (0x9e3779b97f4a7c15ULL * (e + 1));
    cfg.seed = splitmix64(st);
    cfg.threads = threads;
    cfg.x0 = {x0};
    std::vector<double> samples = simulate_terminal(model, cfg);

    SmileRow row;
    row.eps = cfg.epsilon;
    std::vector<double> payoff(samples.size());
    long hits = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      double s = std::exp(samples[i]);
      double pay = spec.call ? s - spec.K : spec.K - s;
      payoff[i] = std::max(pay, 0.0);
      if (payoff[i] > 0) ++hits;
    }
    row.payoff_hits = hits;
    if (hits == 0) {
      row.dropped = true;
      rep.rows.push_back(row);
      continue;
    }
    double mean = pairwise_sum(payoff.data(), payoff.size()) / static_cast<double>(n_paths);
    std::vector<double> sq(payoff.size());
    for (std::size_t i = 0; i < payoff.size(); ++i) sq[i] = (payoff[i] - mean) * (payoff[i] - mean);
    double sd = std::sqrt(pairwise_sum(sq.data(), sq.size()) / (static_cast<double>(n_paths) - 1));
    row.price = mean;
    row.price_se = sd / std::sqrt(static_cast<double>(n_paths));
    double maturity = cfg.epsilon * spec.t;
    if (spec.call) {
      row.implied_vol = implied_vol_invert(mean, spec.S0, spec.K, maturity, 0.0);
    } else {
      // invert through put-call parity at r = 0
      double call_price = mean + spec.S0 - spec.K;
      row.implied_vol = implied_vol_invert(call_price, spec.S0, spec.K, maturity, 0.0);
    }
    row.sigma2 = row.implied_vol * row.implied_vol;
    rep.rows.push_back(row);
  }

  for (auto it = rep.rows.rbegin(); it != rep.rows.rend(); ++it)
    if (!it->dropped) {
      rep.final_gap = std::abs(it->sigma2 - rep.target_sigma2) / rep.target_sigma2;
      break;
    }
  return rep;
}

}  // namespace fastvol
