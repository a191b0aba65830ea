#ifndef FASTVOL_MODEL_HPP
#define FASTVOL_MODEL_HPP

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fastvol/errors.hpp"

namespace fastvol {

enum class RegimeKind { Supercritical, Critical, Subcritical };

struct Regime {
  double alpha;
  RegimeKind kind;
};

// alpha > 2 supercritical, == 2 critical, in (1,2) subcritical; alpha <= 1 invalid
Regime classify_regime(double alpha);
const char* regime_name(RegimeKind k);

// Coefficient callables. Outputs are row-major, caller-allocated:
//   phi   (x, y) -> out[n]
//   sigma (x, y) -> out[n*r]
//   b     (y)    -> out[m]
//   tau   (y)    -> out[m*r]
// Callables must be pure: no hidden mutable state; they are invoked
// concurrently from solver and Monte-Carlo threads.
using CoefXY =
    std::function<void(std::span<const double>, std::span<const double>, std::span<double>)>;
using CoefY = std::function<void(std::span<const double>, std::span<double>)>;

// Closed-form kernel for the 1D trig catalog family (n = m = 1, r <= 2):
//   sigma_j(x,y) = (1 + x_amp tanh x) (s[j][0] + s[j][1] sin 2πy + s[j][2] cos 2πy)
//   tau_j(y)     =                     t[j][0] + t[j][1] sin 2πy + t[j][2] cos 2πy
//   b(y)         = b0 + b_sin sin 2πy + b_cos cos 2πy,   phi = phi0
// Monte-Carlo hot loops dispatch on this to avoid per-step std::function calls.
struct Trig1dKernel {
  int r = 1;
  double s[2][3] = {{0, 0, 0}, {0, 0, 0}};
  double t[2][3] = {{0, 0, 0}, {0, 0, 0}};
  double b0 = 0, b_sin = 0, b_cos = 0;
  double phi0 = 0;
  double x_amp = 0;

  bool needs_cos() const {
    return s[0][2] != 0 || s[1][2] != 0 || t[0][2] != 0 || t[1][2] != 0 || b_cos != 0;
  }
  double x_factor(double x) const { return x_amp == 0 ? 1.0 : 1.0 + x_amp * std::tanh(x); }
  double sigma_col(int j, double xfac, double sn, double cs) const {
    return xfac * (s[j][0] + s[j][1] * sn + s[j][2] * cs);
  }
  double tau_col(int j, double sn, double cs) const {
    return t[j][0] + t[j][1] * sn + t[j][2] * cs;
  }
  double b_val(double sn, double cs) const { return b0 + b_sin * sn + b_cos * cs; }
};

struct ValidationReport {
  int probe_resolution = 0;
  double periodicity_defect = 0;
  double ellipticity_ratio = 0;  // min over probes of |tau^T xi|^2, |xi| = 1
  double sup_phi = 0, sup_sigma = 0, sup_b = 0, sup_tau = 0;
  bool passed = false;
  // measured structure flags
  bool sigma_x_independent = false;
  bool uncorrelated = false;          // tau sigma^T == 0 on probes
  double coercivity_min = 0;          // min/max of |sigma^T p|^2 over unit p probes
  double coercivity_max = 0;
};

struct VolatilityModel {
  int n = 1, m = 1, r = 1;
  CoefXY phi;
  CoefXY sigma;
  CoefY b;
  CoefY tau;
  double theta = 0;            // declared ellipticity lower bound for tau tau^T
  double lipschitz_bound = 1;  // declared common Lipschitz constant

  std::string name = "custom";
  std::map<std::string, double> params;

  // structure metadata, set by the catalog / validate_model
  bool sigma_x_independent = false;
  bool uncorrelated = false;
  std::optional<double> coercivity;  // nu with |sigma^T p|^2 >= nu |p|^2 if positive
  std::optional<Trig1dKernel> kernel;

  // |sigma^T(x,y) p|^2
  double sigma_quad(std::span<const double> x, std::span<const double> y,
                    std::span<const double> p) const;
};

// Checks periodicity, ellipticity and boundedness on a probe grid; throws
// EllipticityViolation / PeriodicityViolation / DimensionMismatch on failure.
ValidationReport validate_model(const VolatilityModel& model, int probe_resolution);

// Applies the measured structure flags of a passing report to the model.
void apply_report(VolatilityModel& model, const ValidationReport& report);

VolatilityModel catalog_model(const std::string& name,
                              const std::map<std::string, double>& params = {});
std::vector<std::string> catalog_names();

}  // namespace fastvol

#endif
