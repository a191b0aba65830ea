#ifndef FASTVOL_EFFECTIVE_HAMILTONIAN_HPP
#define FASTVOL_EFFECTIVE_HAMILTONIAN_HPP

#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fastvol/cell_problems.hpp"
#include "fastvol/grid.hpp"
#include "fastvol/invariant_measure.hpp"
#include "fastvol/model.hpp"

namespace fastvol {

// Regime-dispatched evaluator of Hbar(x, p).
//  - supercritical: invariant measure computed once, quadrature cached as the
//    quadratic form p^T M(x) p with M(x) memoized per x;
//  - critical: memoized principal-eigenvalue cell solves;
//  - subcritical: closed-form fast paths (max formula when tau sigma^T = 0,
//    explicit 1D corrector quadrature when n = m = r = 1), else the
//    Lax-Friedrichs cell solver; memoized.
// Memo keys round (x, p) to 1e-9. evaluate() is safe under concurrent calls;
// concurrent misses may duplicate work but never corrupt the cache.
class EffectiveHamiltonian {
 public:
  struct Options {
    double tol = 1e-9;
    std::vector<double> delta_schedule = {1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
    int lpv_quad_points = 4097;
    double memo_round = 1e-9;
  };

  EffectiveHamiltonian(VolatilityModel model, Regime regime, TorusGrid grid, Options opt = {});

  double evaluate(std::span<const double> x, std::span<const double> p) const;
  double evaluate1d(double x, double p) const;

  const VolatilityModel& model() const { return model_; }
  const Regime& regime() const { return regime_; }
  const TorusGrid& grid() const { return grid_; }
  const Options& options() const { return opt_; }

  // measured growth constants: nu_hat = min, c_hat = max of |sigma^T p|^2
  // over the solve grid, x probes and unit p directions
  double nu_hat() const { return nu_hat_; }
  double c_hat() const { return c_hat_; }
  std::optional<double> nu() const;  // set when the coercivity bound is positive

  // critical case without any of the comparison-principle structures
  bool comparison_warning() const { return comparison_warning_; }
  const char* method() const { return method_; }

  const InvariantMeasure* measure() const { return measure_.get(); }

 private:
  double compute(std::span<const double> x, std::span<const double> p) const;
  double supercritical_form(std::span<const double> x, std::span<const double> p) const;

  VolatilityModel model_;
  Regime regime_;
  TorusGrid grid_;
  Options opt_;
  double nu_hat_ = 0, c_hat_ = 0;
  bool comparison_warning_ = false;
  const char* method_ = "";
  enum class SubPath { UncorrelatedMax, ClosedForm1d, Solver } sub_path_ = SubPath::Solver;

  std::shared_ptr<InvariantMeasure> measure_;  // supercritical only
  mutable std::mutex memo_mutex_;
  mutable std::unordered_map<std::string, double> memo_;
  mutable std::unordered_map<std::string, std::vector<double>> form_memo_;  // x -> M(x)
};

}  // namespace fastvol

#endif
