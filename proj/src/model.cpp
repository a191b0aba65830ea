#include "fastvol/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fastvol/grid.hpp"
#include "fastvol/rng.hpp"

namespace fastvol {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double sup_abs(std::span<const double> v) {
  double s = 0;
  for (double x : v) {
    if (!std::isfinite(x)) return std::numeric_limits<double>::quiet_NaN();
    s = std::max(s, std::abs(x));
  }
  return s;
}

// prefill with NaN so a callable that does not write its full output shape
// is caught as DimensionMismatch
void call_checked(const CoefY& f, std::span<const double> y, std::span<double> out,
                  const char* which) {
  std::fill(out.begin(), out.end(), std::numeric_limits<double>::quiet_NaN());
  f(y, out);
  for (double v : out)
    if (std::isnan(v))
      fail(ErrorCode::DimensionMismatch,
           std::string(which) + " left NaN entries (output shape mismatch or NaN coefficient)");
}

void call_checked(const CoefXY& f, std::span<const double> x, std::span<const double> y,
                  std::span<double> out, const char* which) {
  std::fill(out.begin(), out.end(), std::numeric_limits<double>::quiet_NaN());
  f(x, y, out);
  for (double v : out)
    if (std::isnan(v))
      fail(ErrorCode::DimensionMismatch,
           std::string(which) + " left NaN entries (output shape mismatch or NaN coefficient)");
}

// deterministic unit directions: axes, main diagonal, and a few seeded extras
std::vector<std::vector<double>> unit_directions(int d) {
  std::vector<std::vector<double>> dirs;
  for (int i = 0; i < d; ++i) {
    std::vector<double> e(d, 0.0);
    e[i] = 1.0;
    dirs.push_back(e);
    e[i] = -1.0;
    dirs.push_back(e);
  }
  if (d > 1) {
    std::vector<double> diag(d, 1.0 / std::sqrt(double(d)));
    dirs.push_back(diag);
    Xoshiro256pp rng(0x5eedu);
    for (int k = 0; k < 4; ++k) {
      std::vector<double> v(d);
      double norm = 0;
      for (auto& c : v) {
        c = rng.uniform_sym();
        norm += c * c;
      }
      norm = std::sqrt(norm);
      if (norm < 1e-3) continue;
      for (auto& c : v) c /= norm;
      dirs.push_back(v);
    }
  }
  return dirs;
}

std::vector<std::vector<double>> x_probes(int n) {
  std::vector<std::vector<double>> xs;
  xs.emplace_back(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (double v : {0.5, -0.5, 1.25, -1.25}) {
      std::vector<double> x(n, 0.0);
      x[i] = v;
      xs.push_back(x);
    }
  }
  return xs;
}

}  // namespace

Regime classify_regime(double alpha) {
  if (!(alpha > 1.0)) fail(ErrorCode::InvalidAlpha, "alpha must be > 1");
  if (alpha > 2.0) return {alpha, RegimeKind::Supercritical};
  if (alpha == 2.0) return {alpha, RegimeKind::Critical};
  return {alpha, RegimeKind::Subcritical};
}

const char* regime_name(RegimeKind k) {
  switch (k) {
    case RegimeKind::Supercritical: return "supercritical";
    case RegimeKind::Critical: return "critical";
    case RegimeKind::Subcritical: return "subcritical";
  }
  return "?";
}

double VolatilityModel::sigma_quad(std::span<const double> x, std::span<const double> y,
                                   std::span<const double> p) const {
  std::vector<double> sig(static_cast<std::size_t>(n) * r);
  sigma(x, y, sig);
  double acc = 0;
  for (int j = 0; j < r; ++j) {
    double col = 0;
    for (int i = 0; i < n; ++i) col += sig[static_cast<std::size_t>(i) * r + j] * p[i];
    acc += col * col;
  }
  return acc;
}

ValidationReport validate_model(const VolatilityModel& model, int probe_resolution) {
  if (probe_resolution < 8) fail(ErrorCode::DomainError, "probe_resolution must be >= 8");
  if (model.n < 1 || model.m < 1 || model.r < 1)
    fail(ErrorCode::DimensionMismatch, "dimensions n, m, r must be positive");
  if (!(model.theta > 0)) fail(ErrorCode::DomainError, "theta must be positive");

  ValidationReport rep;
  rep.probe_resolution = probe_resolution;

  // cap the probe lattice so high-dimensional tori stay affordable
  int nodes = probe_resolution;
  while (std::pow(double(nodes), model.m) > 1e6 && nodes > 8) nodes /= 2;
  TorusGrid grid = TorusGrid::uniform(model.m, nodes);

  const auto xs = x_probes(model.n);
  const auto xis = unit_directions(model.m);
  const auto ps = unit_directions(model.n);

  std::vector<double> y(model.m), yshift(model.m);
  std::vector<double> bout(model.m), bout2(model.m);
  std::vector<double> tout(static_cast<std::size_t>(model.m) * model.r);
  std::vector<double> tout2(tout.size());
  std::vector<double> sout(static_cast<std::size_t>(model.n) * model.r);
  std::vector<double> sout2(sout.size());
  std::vector<double> sref(sout.size());
  std::vector<double> pout(model.n), pout2(model.n);

  double defect = 0;
  double ell = std::numeric_limits<double>::infinity();
  double cmin = std::numeric_limits<double>::infinity(), cmax = 0;
  bool xindep = true, uncor = true;

  for (std::size_t k = 0; k < grid.size(); ++k) {
    grid.coords(k, y);

    call_checked(model.b, y, bout, "b");
    call_checked(model.tau, y, tout, "tau");
    rep.sup_b = std::max(rep.sup_b, sup_abs(bout));
    rep.sup_tau = std::max(rep.sup_tau, sup_abs(tout));

    // periodicity of the pure-y coefficients along each axis
    for (int axis = 0; axis < model.m; ++axis) {
      yshift.assign(y.begin(), y.end());
      yshift[axis] += 1.0;
      call_checked(model.b, yshift, bout2, "b");
      call_checked(model.tau, yshift, tout2, "tau");
      for (int i = 0; i < model.m; ++i) defect = std::max(defect, std::abs(bout[i] - bout2[i]));
      for (std::size_t i = 0; i < tout.size(); ++i)
        defect = std::max(defect, std::abs(tout[i] - tout2[i]));
    }

    // ellipticity of tau tau^T
    for (const auto& xi : xis) {
      double q = 0;
      for (int j = 0; j < model.r; ++j) {
        double col = 0;
        for (int i = 0; i < model.m; ++i) col += tout[static_cast<std::size_t>(i) * model.r + j] * xi[i];
        q += col * col;
      }
      ell = std::min(ell, q);
    }

    // x-dependent coefficients on the x probe set
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
      const auto& x = xs[xi];
      call_checked(model.sigma, x, y, sout, "sigma");
      call_checked(model.phi, x, y, pout, "phi");
      rep.sup_sigma = std::max(rep.sup_sigma, sup_abs(sout));
      rep.sup_phi = std::max(rep.sup_phi, sup_abs(pout));
      if (xi == 0) sref = sout;
      else
        for (std::size_t i = 0; i < sout.size(); ++i)
          if (std::abs(sout[i] - sref[i]) > 1e-12) xindep = false;

      for (int axis = 0; axis < model.m; ++axis) {
        yshift.assign(y.begin(), y.end());
        yshift[axis] += 1.0;
        call_checked(model.sigma, x, yshift, sout2, "sigma");
        call_checked(model.phi, x, yshift, pout2, "phi");
        for (std::size_t i = 0; i < sout.size(); ++i)
          defect = std::max(defect, std::abs(sout[i] - sout2[i]));
        for (int i = 0; i < model.n; ++i) defect = std::max(defect, std::abs(pout[i] - pout2[i]));
      }

      // tau sigma^T (m x n) and coercivity of |sigma^T p|^2
      for (int i = 0; i < model.m; ++i)
        for (int l = 0; l < model.n; ++l) {
          double acc = 0;
          for (int j = 0; j < model.r; ++j)
            acc += tout[static_cast<std::size_t>(i) * model.r + j] *
                   sout[static_cast<std::size_t>(l) * model.r + j];
          if (std::abs(acc) > 1e-12) uncor = false;
        }
      for (const auto& p : ps) {
        double q = 0;
        for (int j = 0; j < model.r; ++j) {
          double col = 0;
          for (int i = 0; i < model.n; ++i) col += sout[static_cast<std::size_t>(i) * model.r + j] * p[i];
          q += col * col;
        }
        cmin = std::min(cmin, q);
        cmax = std::max(cmax, q);
      }
    }
  }

  rep.periodicity_defect = defect;
  rep.ellipticity_ratio = ell;
  rep.sigma_x_independent = xindep;
  rep.uncorrelated = uncor;
  rep.coercivity_min = cmin;
  rep.coercivity_max = cmax;
  rep.passed = defect <= 1e-10 && ell >= model.theta;

  if (defect > 1e-10)
    fail(ErrorCode::PeriodicityViolation,
         "periodicity defect " + std::to_string(defect) + " exceeds 1e-10");
  if (ell < model.theta)
    fail(ErrorCode::EllipticityViolation, "ellipticity ratio " + std::to_string(ell) +
                                              " below declared theta " + std::to_string(model.theta));
  return rep;
}

void apply_report(VolatilityModel& model, const ValidationReport& report) {
  model.sigma_x_independent = report.sigma_x_independent;
  model.uncorrelated = report.uncorrelated;
  if (report.coercivity_min > 1e-12) model.coercivity = report.coercivity_min;
}

namespace {

struct ParamReader {
  std::map<std::string, double> kv;
  mutable std::vector<std::string> seen;
  double get(const std::string& key, double dflt) const {
    seen.push_back(key);
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
  }
  void finish(const std::string& model) const {
    for (const auto& [k, v] : kv)
      if (std::find(seen.begin(), seen.end(), k) == seen.end())
        fail(ErrorCode::BadParameter, "unknown parameter '" + k + "' for model " + model);
  }
};

VolatilityModel from_kernel(const Trig1dKernel& ker, std::string name, double theta,
                            std::map<std::string, double> params) {
  VolatilityModel mod;
  mod.n = 1;
  mod.m = 1;
  mod.r = ker.r;
  mod.name = std::move(name);
  mod.params = std::move(params);
  mod.theta = theta;
  mod.kernel = ker;
  mod.phi = [ker](std::span<const double>, std::span<const double>, std::span<double> out) {
    out[0] = ker.phi0;
  };
  mod.sigma = [ker](std::span<const double> x, std::span<const double> y, std::span<double> out) {
    double sn = std::sin(kTwoPi * y[0]), cs = std::cos(kTwoPi * y[0]);
    double xf = ker.x_factor(x[0]);
    for (int j = 0; j < ker.r; ++j) out[j] = ker.sigma_col(j, xf, sn, cs);
  };
  mod.b = [ker](std::span<const double> y, std::span<double> out) {
    double sn = std::sin(kTwoPi * y[0]), cs = std::cos(kTwoPi * y[0]);
    out[0] = ker.b_val(sn, cs);
  };
  mod.tau = [ker](std::span<const double> y, std::span<double> out) {
    double sn = std::sin(kTwoPi * y[0]), cs = std::cos(kTwoPi * y[0]);
    for (int j = 0; j < ker.r; ++j) out[j] = ker.tau_col(j, sn, cs);
  };
  return mod;
}

}  // namespace

std::vector<std::string> catalog_names() {
  return {"const-sigma", "sine-1d", "correlated-1d", "gradient-drift", "xdep-1d"};
}

VolatilityModel catalog_model(const std::string& name,
                              const std::map<std::string, double>& params) {
  ParamReader pr{params, {}};
  Trig1dKernel ker;
  double theta = 0;
  if (name == "const-sigma") {
    double sigma0 = pr.get("sigma0", 0.3);
    ker.phi0 = pr.get("phi0", 0.0);
    if (!(sigma0 > 0)) fail(ErrorCode::BadParameter, "sigma0 must be positive");
    ker.r = 2;
    ker.s[0][0] = sigma0;
    ker.t[1][0] = 1.0;
    theta = 0.95;
  } else if (name == "sine-1d") {
    double s0 = pr.get("s0", 1.0), s1 = pr.get("s1", 0.5), tau0 = pr.get("tau0", 1.0);
    ker.phi0 = pr.get("phi0", 0.0);
    if (!(tau0 > 0)) fail(ErrorCode::BadParameter, "tau0 must be positive");
    if (std::abs(s1) > s0) fail(ErrorCode::BadParameter, "need |s1| <= s0 so sigma >= 0");
    ker.r = 2;
    ker.s[0][0] = s0;
    ker.s[0][1] = s1;
    ker.t[1][0] = tau0;
    theta = 0.95 * tau0 * tau0;
  } else if (name == "correlated-1d") {
    double s0 = pr.get("s0", 1.0), s1 = pr.get("s1", 0.5);
    double tau0 = pr.get("tau0", 1.0), tau1 = pr.get("tau1", 0.3);
    ker.b0 = pr.get("b0", 0.0);
    ker.phi0 = pr.get("phi0", 0.0);
    if (!(tau0 > std::abs(tau1))) fail(ErrorCode::BadParameter, "need tau0 > |tau1| so tau > 0");
    if (std::abs(s1) > s0) fail(ErrorCode::BadParameter, "need |s1| <= s0 so sigma >= 0");
    ker.r = 1;
    ker.s[0][0] = s0;
    ker.s[0][1] = s1;
    ker.t[0][0] = tau0;
    ker.t[0][1] = tau1;
    double tmin = tau0 - std::abs(tau1);
    theta = 0.95 * tmin * tmin;
  } else if (name == "gradient-drift") {
    double u0 = pr.get("u0", 1.0), s0 = pr.get("s0", 1.0), s1 = pr.get("s1", 0.25);
    ker.phi0 = pr.get("phi0", 0.0);
    if (std::abs(s1) > s0) fail(ErrorCode::BadParameter, "need |s1| <= s0 so sigma >= 0");
    // b = dU/dy for U = u0 cos(2 pi y)
    ker.r = 2;
    ker.b_sin = -kTwoPi * u0;
    ker.s[0][0] = s0;
    ker.s[0][2] = s1;
    ker.t[1][0] = 1.0;
    theta = 0.95;
  } else if (name == "xdep-1d") {
    double s0 = pr.get("s0", 1.0), s1 = pr.get("s1", 0.5), tau0 = pr.get("tau0", 1.0);
    double amp = pr.get("amp", 0.5);
    ker.phi0 = pr.get("phi0", 0.0);
    if (!(tau0 > 0)) fail(ErrorCode::BadParameter, "tau0 must be positive");
    if (!(amp >= 0 && amp < 1)) fail(ErrorCode::BadParameter, "need 0 <= amp < 1");
    if (std::abs(s1) > s0) fail(ErrorCode::BadParameter, "need |s1| <= s0 so sigma >= 0");
    ker.r = 2;
    ker.s[0][0] = s0;
    ker.s[0][1] = s1;
    ker.t[1][0] = tau0;
    ker.x_amp = amp;
    theta = 0.95 * tau0 * tau0;
  } else {
    std::string names;
    for (const auto& s : catalog_names()) names += (names.empty() ? "" : ", ") + s;
    fail(ErrorCode::UnknownModel, "'" + name + "' (catalog: " + names + ")");
  }
  pr.finish(name);

  VolatilityModel mod = from_kernel(ker, name, theta, params);
  ValidationReport rep = validate_model(mod, 64);
  apply_report(mod, rep);
  return mod;
}

}  // namespace fastvol
