#ifndef FASTVOL_LEGENDRE_RATE_HPP
#define FASTVOL_LEGENDRE_RATE_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fastvol/effective_hamiltonian.hpp"

namespace fastvol {

struct LegendreResult {
  double value = 0;
  std::vector<double> argmax;
};

// Convex conjugate  Lbar(x, q) = sup_p { p.q - Hbar(x, p) }  by nested grid
// search on the box |p|_inf <= R(q) = |q| / nu_hat, two local refinements and
// a per-axis parabolic polish. The returned value is attained at an evaluated
// point, hence a lower bound on the true sup.
class EffectiveLagrangian {
 public:
  explicit EffectiveLagrangian(std::shared_ptr<const EffectiveHamiltonian> H,
                               int coarse_points = 33, int refinements = 2);

  double value(std::span<const double> x, std::span<const double> q) const;
  LegendreResult detail(std::span<const double> x, std::span<const double> q) const;
  double value1d(double x, double q) const;

  double nu_hat() const { return H_->nu_hat(); }
  double c_hat() const { return H_->c_hat(); }
  const EffectiveHamiltonian& hamiltonian() const { return *H_; }

 private:
  std::shared_ptr<const EffectiveHamiltonian> H_;
  int coarse_points_, refinements_;
};

struct RatePathPoint {
  double s;
  std::vector<double> xi;
};

struct RateFunctionResult {
  double value = 0;
  std::vector<RatePathPoint> path;
  int iterations = 0;
  bool converged = false;
  std::string notes;
};

// x-independent shortcut I = t Lbar((x - x0)/t) with the straight-line path.
RateFunctionResult rate_x_independent(const EffectiveLagrangian& L, std::span<const double> x0,
                                      std::span<const double> x, double t, int segments = 64);

// Riemann-sum action minimization over interior path nodes: finite-difference
// gradient descent with backtracking, multistart from the straight line plus
// seeded perturbations. Never exceeds the straight-line action; on failure
// returns best-so-far with converged = false.
RateFunctionResult rate_general(const EffectiveLagrangian& L, std::span<const double> x0,
                                std::span<const double> x, double t, int segments = 64,
                                int restarts = 2, std::uint64_t seed = 1234);

struct Pde1dSolution {
  std::vector<double> xs;
  std::vector<double> v;
  double dt = 0;
  int steps = 0;
  double interpolate(double x) const;
};

// Monotone Lax-Friedrichs time-explicit scheme for  v_t - Hbar(x, v_x) = 0,
// v(0, .) = h, on [lo, hi] with linear-extrapolation ghost nodes. dt obeys the
// CFL bound against the measured max |dHbar/dp|. 1D slow variable only.
Pde1dSolution solve_effective_pde(const EffectiveHamiltonian& H,
                                  const std::function<double(double)>& h, double t, double lo,
                                  double hi, int nx, double cfl = 0.5);

// Hopf-Lax value  sup_y { h(y) - t Lbar((y - x)/t) }  for x-independent 1D
// Hamiltonians: grid over the action-bounded radius, refinements, polish.
double hopf_lax(const EffectiveLagrangian& L, const std::function<double(double)>& h, double t,
                double x);

struct DualityReport {
  double duality_value = 0;  // sup over the finite family of h(x) - v^h(t, x0)
  double rate_value = 0;
  double gap = 0;  // (rate - duality) / max(rate, eps)
  bool lower_bound_ok = false;
  int family_size = 0;
};

// One-sided consistency check of the variational rate against the duality
// formula over a finite family of bounded continuous test functions
// (bumps of several widths/amplitudes, the zero function, and a capped-rate
// function). The finite sup is a lower bound; exceeding rate + tol fails.
DualityReport rate_from_duality_check(const EffectiveLagrangian& L, double x0, double x, double t,
                                      int family_size = 20, double tol = 1e-9);

}  // namespace fastvol

#endif
