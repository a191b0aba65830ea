#ifndef FASTVOL_CELL_PROBLEMS_HPP
#define FASTVOL_CELL_PROBLEMS_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "fastvol/estimates.hpp"
#include "fastvol/grid.hpp"
#include "fastvol/invariant_measure.hpp"
#include "fastvol/model.hpp"

namespace fastvol {

enum class CellMethod { Eigenvalue, Discount };

struct CriticalCellSolution {
  double h_bar = 0;
  GridFunction corrector;      // w with w(0) = 0
  GridFunction eigenfunction;  // g = e^w > 0 scaled to max = 1
  CellMethod method = CellMethod::Eigenvalue;
  SolveDiagnostics diag;
};

struct SubcriticalCellSolution {
  double h_bar = 0;   // extrapolated delta * mean(w_delta), clamped at 0
  double h_zero = 0;  // sqrt(h_bar)
  GridFunction corrector;
  SolveDiagnostics diag;  // residual is wrt the Lax-Friedrichs discretization
  std::vector<std::pair<double, double>> delta_values;  // (delta, delta*mean w)
};

// Principal eigenvalue of  L^{x,p} g + V g = Hbar g  on the torus:
//   L^{x,p} = (b + 2 tau sigma^T p) . D_y + tr(tau tau^T D^2_yy),  V = |sigma^T p|^2.
// Centered second-order discretization; shifted inverse power iteration with
// Collatz-Wielandt stopping. Corrector = log g - log g(0).
CriticalCellSolution solve_cell_critical_eigen(const VolatilityModel& model, const TorusGrid& grid,
                                               std::span<const double> x,
                                               std::span<const double> p, double tol);

// Small-discount approximation: for each delta solves
//   delta w - tr(tau tau^T D^2 w) - |tau^T Dw|^2 - (b + 2 tau sigma^T p) . Dw - V = 0
// by Howard policy iteration on the Bellman form (optimal feedback
// beta = -tau^T Dw), then extrapolates delta*mean(w) linearly from the last
// two schedule entries. Enforces |delta w| <= max V + tol (BoundViolation).
CriticalCellSolution solve_cell_critical_discount(const VolatilityModel& model,
                                                  const TorusGrid& grid,
                                                  std::span<const double> x,
                                                  std::span<const double> p,
                                                  std::span<const double> delta_schedule,
                                                  double tol);

// Monte-Carlo cross-check of the critical Hbar:
//   (1/t) log E exp( int_0^t |sigma^T(x, Y_s) p|^2 ds ),
//   dY = (b + 2 tau sigma^T p) dt + sqrt(2) tau dW  (Euler-Maruyama, wrapped).
// Log-sum-exp stabilized; standard error by the delta method on the log.
McEstimate feynman_kac_oracle(const VolatilityModel& model, std::span<const double> x,
                              std::span<const double> p, double t_horizon, long n_paths,
                              double dt, std::uint64_t seed, int threads = 0);

// Invariant measure of the optimally-controlled process
//   dZ = (b + 2 tau sigma^T p + 2 tau tau^T Dw) dt + sqrt(2) tau dW,
// with Dw read from the solution corrector.
InvariantMeasure critical_invariant_measure(const VolatilityModel& model, const TorusGrid& grid,
                                            const CriticalCellSolution& solution,
                                            std::span<const double> x, std::span<const double> p,
                                            double tol = 1e-8);

// Quadrature of (|sigma^T p|^2 - |tau^T Dw|^2) dmu; equals h_bar up to
// discretization error.
double critical_measure_identity(const VolatilityModel& model,
                                 const CriticalCellSolution& solution,
                                 const InvariantMeasure& mu, std::span<const double> x,
                                 std::span<const double> p);

// First-order coercive cell problem  delta w = |tau^T Dw + sigma^T p|^2 via a
// monotone Lax-Friedrichs discretization iterated to a fixed point by
// Gauss-Seidel sweeping (all 2^m diagonal orderings alternate), with a
// coarse-to-fine cascade and warm starts along the delta schedule.
SubcriticalCellSolution solve_cell_subcritical(const VolatilityModel& model, const TorusGrid& grid,
                                               std::span<const double> x,
                                               std::span<const double> p,
                                               std::span<const double> delta_schedule, double tol);

// n=m=r=1 explicit-corrector formula: (int sigma/tau)^2 (int 1/tau)^-2 p^2,
// composite trapezoid with quad_points nodes. Requires sigma >= 0, tau > 0.
double h_bar_subcritical_closed_1d(const std::function<double(double)>& sigma,
                                   const std::function<double(double)>& tau, double p,
                                   int quad_points);

// tau sigma^T = 0 case: max_y |sigma^T(x,y) p|^2 over the grid, with one
// parabolic refinement around the argmax.
double h_bar_uncorrelated_max(const VolatilityModel& model, const TorusGrid& grid,
                              std::span<const double> x, std::span<const double> p);

}  // namespace fastvol

#endif
