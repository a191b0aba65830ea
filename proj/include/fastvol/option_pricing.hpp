#ifndef FASTVOL_OPTION_PRICING_HPP
#define FASTVOL_OPTION_PRICING_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fastvol/legendre_rate.hpp"
#include "fastvol/mc_two_scale.hpp"
#include "fastvol/model.hpp"

namespace fastvol {

struct OptionSpec {
  double S0 = 1.0;
  double K = 1.1;
  double t = 1.0;  // fixed t; the option maturity is eps * t
  bool call = true;
  double r = 0.0;  // short rate, Black-Scholes plumbing only
};

// 1D rate-function evaluator at fixed (x0, t): y -> I(y; x0, t)
struct RateEvaluator1d {
  std::function<double(double)> I;
  double x0 = 0;
  double t = 1;
  bool x_independent = false;
  double nu_hat = 0, c_hat = 1;
};

RateEvaluator1d make_rate_evaluator(std::shared_ptr<const EffectiveLagrangian> L, double x0,
                                    double t, int segments = 64, int restarts = 2,
                                    std::uint64_t seed = 99);

// lim eps log E[(S_t^eps - K)^+] = -inf_{y > log K} I(y; x0, t); out-of-the-money
// only. In the x-independent 1D case the infimum sits at the boundary log K.
double otm_price_decay(const RateEvaluator1d& rate, const OptionSpec& spec);

// lim sigma_eps^2 = (log K - x0)^2 / (2 t inf_{y > log K} I); the infimum is
// strictly positive out of the money, else DegenerateRate.
double implied_vol_limit(const RateEvaluator1d& rate, const OptionSpec& spec);

double black_scholes_call(double S0, double K, double maturity, double vol, double r);
double black_scholes_put(double S0, double K, double maturity, double vol, double r);

// bisection bracket then Newton polish; |BS(result) - price| <= 1e-12 S0
double implied_vol_invert(double price, double S0, double K, double maturity, double r);

struct SmileRow {
  double eps = 0;
  double price = 0, price_se = 0;
  double implied_vol = 0, sigma2 = 0;
  long payoff_hits = 0;
  bool dropped = false;  // all paths expired worthless at this eps
};

struct SmileReport {
  std::vector<SmileRow> rows;
  double target_sigma2 = 0;  // implied-vol limit from the rate function
  double final_gap = 0;      // |last sigma2 - target| / target
};

// Monte-Carlo implied-volatility sequence: for each eps, price the option off
// simulated terminal log-prices (maturity eps*t), invert to implied vol and
// compare sigma_eps^2 against the limit.
SmileReport mc_smile(const VolatilityModel& model, double alpha, const OptionSpec& spec,
                     const RateEvaluator1d& rate, std::span<const double> eps_list, long n_paths,
                     std::uint64_t seed, int threads = 0);

}  // namespace fastvol

#endif
