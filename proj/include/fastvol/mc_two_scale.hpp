#ifndef FASTVOL_MC_TWO_SCALE_HPP
#define FASTVOL_MC_TWO_SCALE_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fastvol/estimates.hpp"
#include "fastvol/model.hpp"

namespace fastvol {

// Euler-Maruyama configuration for the rescaled two-scale system
//   dX = eps phi dt + sqrt(2 eps) sigma dW,
//   dY = eps^{1-alpha} b dt + sqrt(2 eps^{1-alpha}) tau dW,
// one shared r-dimensional increment per step; Y wrapped to [0,1)^m, X free.
struct SimConfig {
  double epsilon = 0.1;
  double alpha = 2.0;
  double t = 1.0;
  double dt = 0;  // must satisfy dt <= 0.1 eps^{alpha-1}
  long n_paths = 10000;
  std::uint64_t seed = 0;
  std::vector<double> x0;  // defaults to zeros
  std::vector<double> y0;
  int threads = 0;
};

void validate_config(const VolatilityModel& model, const SimConfig& cfg);

// convenience: the largest admissible step, also resolving the slow horizon
double default_dt(double epsilon, double alpha, double t);

// terminal slow-state samples, n_paths x n row-major; bit-reproducible from
// (cfg.seed, path index) for any thread count
std::vector<double> simulate_terminal(const VolatilityModel& model, const SimConfig& cfg);

// v_eps = eps log E exp(h(X_t)/eps), log-sum-exp stabilized, delta-method SE;
// the value always lies in [min h, max h] over the samples
McEstimate estimate_v_eps(const VolatilityModel& model, const SimConfig& cfg,
                          const std::function<double(std::span<const double>)>& h);

// open event set for the LDP check: componentwise lo < x < hi with +-inf
// entries allowed; a 1D half-line is {lo = threshold, hi = +inf}
struct EventSet {
  std::vector<double> lo, hi;
  bool contains(std::span<const double> x) const;
  static EventSet half_line_above(double threshold);
  static EventSet half_line_below(double threshold);
};

struct LdpRow {
  double eps = 0;
  long hits = 0;
  long n = 0;
  double p_hat = 0;
  double y = 0;     // eps log p_hat
  double se_y = 0;  // Wilson (z = 1) half-width mapped through eps log
  bool dropped = false;
};

struct LdpReport {
  std::vector<LdpRow> rows;
  double intercept = 0, intercept_se = 0, slope = 0;
  int points_used = 0;
  std::optional<double> target;  // -inf_B I when supplied
  double rel_gap = 0;            // |intercept - (-target)| / |target|
};

// For each eps: estimate eps log P(X_t in B) with 2e5-scale path budgets,
// drop zero-hit rows, then fit an affine model in eps by ordinary least
// squares (Wilson uncertainties propagated into the intercept error).
LdpReport ldp_slope(const VolatilityModel& model, double alpha, double t, const EventSet& B,
                    std::span<const double> eps_list, long n_paths, std::uint64_t seed,
                    int threads = 0, std::optional<double> target_rate = {});

}  // namespace fastvol

#endif
