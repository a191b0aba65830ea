#ifndef FASTVOL_INVARIANT_MEASURE_HPP
#define FASTVOL_INVARIANT_MEASURE_HPP

#include <span>

#include "fastvol/grid.hpp"
#include "fastvol/model.hpp"

namespace fastvol {

struct InvariantMeasure {
  GridFunction density;
  double residual_norm = 0;  // max-norm of the discrete operator applied to density
  double mass = 0;
};

// Stationary Fokker-Planck on the torus in conservative centered form,
//   -sum_ij D2_ij(a_ij mu) + sum_i D_i(drift_i mu) = 0,  integral mu = 1,
// with `a` filling the m*m matrix (row-major) and `drift` filling m entries.
// `order` selects the centered-difference order (2 or 4). The discrete
// operator has exact zero column sums, so the kernel is computed by one
// mass-constrained (bordered) sparse solve plus iterative refinement.
InvariantMeasure solve_stationary_fokker_planck(const TorusGrid& grid, const CoefY& a,
                                                const CoefY& drift, double tol, int order = 4);

// Invariant measure of dY = b dt + sqrt(2) tau dW: a = tau tau^T, drift = b.
InvariantMeasure solve_invariant_measure(const VolatilityModel& model, const TorusGrid& grid,
                                         double tol, int order = 4);

// Supercritical effective Hamiltonian: quadrature of |sigma^T(x,y) p|^2 dmu.
double h_bar_supercritical(const VolatilityModel& model, const InvariantMeasure& mu,
                           std::span<const double> x, std::span<const double> p);

}  // namespace fastvol

#endif
