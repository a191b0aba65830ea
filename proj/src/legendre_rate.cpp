#include "fastvol/legendre_rate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fastvol/errors.hpp"
#include "fastvol/rng.hpp"

namespace fastvol {

namespace {

double norm2(std::span<const double> v) {
  double s = 0;
  for (double c : v) s += c * c;
  return std::sqrt(s);
}

// odometer over an n-dim lattice of `pts` points per axis
template <class F>
void lattice_visit(int n, int pts, F&& body) {
  std::vector<int> idx(n, 0);
  bool done = false;
  while (!done) {
    body(idx);
    done = true;
    for (int i = n - 1; i >= 0; --i) {
      if (++idx[i] < pts) {
        done = false;
        break;
      }
      idx[i] = 0;
    }
  }
}

}  // namespace

EffectiveLagrangian::EffectiveLagrangian(std::shared_ptr<const EffectiveHamiltonian> H,
                                         int coarse_points, int refinements)
    : H_(std::move(H)), coarse_points_(coarse_points), refinements_(refinements) {
  if (coarse_points_ < 5 || coarse_points_ % 2 == 0)
    fail(ErrorCode::DomainError, "coarse grid needs an odd point count >= 5");
}

double EffectiveLagrangian::value(std::span<const double> x, std::span<const double> q) const {
  return detail(x, q).value;
}

double EffectiveLagrangian::value1d(double x, double q) const {
  return detail(std::span<const double>(&x, 1), std::span<const double>(&q, 1)).value;
}

LegendreResult EffectiveLagrangian::detail(std::span<const double> x,
                                           std::span<const double> q) const {
  const int n = H_->model().n;
  if (static_cast<int>(q.size()) != n) fail(ErrorCode::DimensionMismatch, "q must be n-dimensional");
  LegendreResult res;
  res.argmax.assign(n, 0.0);
  double qn = norm2(q);
  if (qn < 1e-300) {
    res.value = 0.0;  // Hbar >= 0 with Hbar(x,0) = 0 makes the sup exactly 0
    return res;
  }

  double nu = std::max(H_->nu_hat(), 1e-8);
  double R = qn / nu;

  // coercivity probe: quadratic-like growth along every box edge
  {
    std::vector<double> pd(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (double sgn : {1.0, -1.0}) {
        std::fill(pd.begin(), pd.end(), 0.0);
        pd[i] = sgn * R;
        double f2 = H_->evaluate(x, pd);
        pd[i] = sgn * R / 2;
        double f1 = H_->evaluate(x, pd);
        if (f2 <= 2.0 * f1 + 1e-12 * (1.0 + std::abs(f1)))
          fail(ErrorCode::NotCoercive,
               "Hbar grows at most linearly along a search-box edge; conjugate may be +inf");
      }
  }

  const int pts = coarse_points_;
  std::vector<double> center(n, 0.0), best_p(n, 0.0), p(n);
  double halfwidth = R;
  double best = -std::numeric_limits<double>::infinity();
  for (int level = 0; level <= refinements_; ++level) {
    double spacing = 2 * halfwidth / (pts - 1);
    lattice_visit(n, pts, [&](const std::vector<int>& idx) {
      for (int i = 0; i < n; ++i) p[i] = center[i] - halfwidth + spacing * idx[i];
      double obj = 0;
      for (int i = 0; i < n; ++i) obj += p[i] * q[i];
      obj -= H_->evaluate(x, p);
      if (obj > best) {
        best = obj;
        best_p = p;
      }
    });
    center = best_p;
    halfwidth = 2.5 * spacing;
  }

  // per-axis parabolic polish at the final spacing
  double spacing = 2 * halfwidth / (pts - 1);
  auto objective = [&](const std::vector<double>& pp) {
    double obj = 0;
    for (int i = 0; i < n; ++i) obj += pp[i] * q[i];
    return obj - H_->evaluate(x, pp);
  };
  std::vector<double> pv = best_p;
  for (int i = 0; i < n; ++i) {
    std::vector<double> pm = pv, pl = pv;
    pm[i] -= spacing;
    pl[i] += spacing;
    double fm = objective(pm), f0 = objective(pv), fp = objective(pl);
    double denom = fm - 2 * f0 + fp;
    if (denom < 0) {
      double tshift = 0.5 * (fm - fp) / denom;
      tshift = std::clamp(tshift, -1.0, 1.0);
      pv[i] += tshift * spacing;
    }
  }
  double polished = objective(pv);
  if (polished > best) {
    best = polished;
    best_p = pv;
  }

  res.value = std::max(best, 0.0);  // p = 0 is always admissible
  res.argmax = best_p;
  return res;
}

namespace {

std::vector<RatePathPoint> straight_path(std::span<const double> x0, std::span<const double> x,
                                         double t, int K) {
  std::vector<RatePathPoint> path(static_cast<std::size_t>(K) + 1);
  const int n = static_cast<int>(x0.size());
  for (int k = 0; k <= K; ++k) {
    path[k].s = t * k / K;
    path[k].xi.resize(n);
    for (int i = 0; i < n; ++i) path[k].xi[i] = x0[i] + (x[i] - x0[i]) * k / K;
  }
  return path;
}

double action_of(const EffectiveLagrangian& L, const std::vector<std::vector<double>>& xi,
                 double ds) {
  const int K = static_cast<int>(xi.size()) - 1;
  const int n = static_cast<int>(xi[0].size());
  std::vector<double> q(n);
  double acc = 0;
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < n; ++i) q[i] = (xi[k + 1][i] - xi[k][i]) / ds;
    acc += L.value(xi[k], q) * ds;
  }
  return acc;
}

// action terms touched by node k (the L(xi_{k-1}, .) and L(xi_k, .) segments)
double local_action(const EffectiveLagrangian& L, const std::vector<std::vector<double>>& xi,
                    double ds, int k) {
  const int n = static_cast<int>(xi[0].size());
  std::vector<double> q(n);
  double acc = 0;
  for (int seg : {k - 1, k}) {
    if (seg < 0 || seg >= static_cast<int>(xi.size()) - 1) continue;
    for (int i = 0; i < n; ++i) q[i] = (xi[seg + 1][i] - xi[seg][i]) / ds;
    acc += L.value(xi[seg], q) * ds;
  }
  return acc;
}

}  // namespace

RateFunctionResult rate_x_independent(const EffectiveLagrangian& L, std::span<const double> x0,
                                      std::span<const double> x, double t, int segments) {
  if (!L.hamiltonian().model().sigma_x_independent)
    fail(ErrorCode::NotXIndependent, "model sigma depends on x");
  if (!(t > 0)) fail(ErrorCode::DomainError, "t must be positive");
  const int n = static_cast<int>(x0.size());
  std::vector<double> q(n);
  for (int i = 0; i < n; ++i) q[i] = (x[i] - x0[i]) / t;
  std::vector<double> zero(n, 0.0);
  RateFunctionResult res;
  res.value = t * L.value(zero, q);
  res.path = straight_path(x0, x, t, segments);
  res.converged = true;
  res.iterations = 0;
  return res;
}

RateFunctionResult rate_general(const EffectiveLagrangian& L, std::span<const double> x0,
                                std::span<const double> x, double t, int segments, int restarts,
                                std::uint64_t seed) {
  if (!(t > 0)) fail(ErrorCode::DomainError, "t must be positive");
  if (segments < 8) fail(ErrorCode::DomainError, "need at least 8 path segments");
  const int K = segments;
  const int n = static_cast<int>(x0.size());
  const double ds = t / K;

  auto base = straight_path(x0, x, t, K);
  std::vector<std::vector<double>> straight(base.size());
  for (std::size_t k = 0; k < base.size(); ++k) straight[k] = base[k].xi;
  const double straight_action = action_of(L, straight, ds);

  double scale = 0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(x[i] - x0[i]));
  scale = std::max(scale, 0.1);

  double best_value = straight_action;
  std::vector<std::vector<double>> best_path = straight;
  bool best_converged = true;  // straight line counts as a converged candidate
  int total_iters = 0;

  for (int run = 0; run <= restarts; ++run) {
    std::vector<std::vector<double>> xi = straight;
    if (run > 0) {
      NormalSampler g(path_seed(seed, static_cast<std::uint64_t>(run)));
      for (int k = 1; k < K; ++k) {
        double envelope = std::sin(M_PI * k / K);
        for (int i = 0; i < n; ++i) xi[k][i] += 0.25 * scale * envelope * g();
      }
    }
    double action = action_of(L, xi, ds);
    double step = 0.1 * scale;
    bool converged = false;
    int it = 0;
    for (; it < 200; ++it) {
      // finite-difference gradient from the two adjacent action terms
      std::vector<std::vector<double>> grad(K + 1, std::vector<double>(n, 0.0));
      double gmax = 0;
      const double eta = 1e-6 * scale;
      for (int k = 1; k < K; ++k)
        for (int i = 0; i < n; ++i) {
          double save = xi[k][i];
          xi[k][i] = save + eta;
          double fp = local_action(L, xi, ds, k);
          xi[k][i] = save - eta;
          double fm = local_action(L, xi, ds, k);
          xi[k][i] = save;
          grad[k][i] = (fp - fm) / (2 * eta);
          gmax = std::max(gmax, std::abs(grad[k][i]));
        }
      if (gmax * scale < 1e-9 * std::max(1.0, action)) {
        converged = true;
        break;
      }
      // backtracking descent
      bool improved = false;
      for (int ls = 0; ls < 30; ++ls) {
        std::vector<std::vector<double>> trial = xi;
        for (int k = 1; k < K; ++k)
          for (int i = 0; i < n; ++i) trial[k][i] -= step * grad[k][i];
        double anew = action_of(L, trial, ds);
        if (anew < action - 1e-12 * std::max(1.0, std::abs(action))) {
          xi = std::move(trial);
          action = anew;
          improved = true;
          step *= 1.3;
          break;
        }
        step *= 0.5;
      }
      if (!improved) {
        converged = true;  // no descent direction at line-search resolution
        break;
      }
    }
    total_iters += it;
    if (action < best_value) {
      best_value = action;
      best_path = xi;
      best_converged = converged;
    }
  }

  RateFunctionResult res;
  res.value = best_value;
  res.iterations = total_iters;
  res.converged = best_converged;
  if (!best_converged) res.notes = "iteration budget exhausted; returning best-so-far";
  res.path.resize(best_path.size());
  for (std::size_t k = 0; k < best_path.size(); ++k) {
    res.path[k].s = ds * static_cast<double>(k);
    res.path[k].xi = best_path[k];
  }
  return res;
}

double Pde1dSolution::interpolate(double x) const {
  if (xs.size() < 2) fail(ErrorCode::DomainError, "empty pde solution");
  double lo = xs.front(), hi = xs.back();
  double dx = xs[1] - xs[0];
  double u = std::clamp((x - lo) / (hi - lo), 0.0, 1.0) * (static_cast<double>(xs.size()) - 1);
  std::size_t i = std::min(static_cast<std::size_t>(u), xs.size() - 2);
  double f = u - static_cast<double>(i);
  (void)dx;
  return v[i] * (1 - f) + v[i + 1] * f;
}

Pde1dSolution solve_effective_pde(const EffectiveHamiltonian& H,
                                  const std::function<double(double)>& h, double t, double lo,
                                  double hi, int nx, double cfl) {
  if (H.model().n != 1) fail(ErrorCode::DomainError, "effective pde solver supports n = 1");
  if (!(cfl > 0) || cfl > 0.9) fail(ErrorCode::DomainError, "need 0 < cfl <= 0.9");
  if (nx < 16 || !(hi > lo)) fail(ErrorCode::DomainError, "bad space grid");
  if (t < 0) fail(ErrorCode::DomainError, "t must be >= 0");

  Pde1dSolution out;
  const double dx = (hi - lo) / (nx - 1);
  out.xs.resize(nx);
  out.v.resize(nx);
  for (int i = 0; i < nx; ++i) {
    out.xs[i] = lo + dx * i;
    out.v[i] = h(out.xs[i]);
  }
  if (t == 0) return out;

  // calibrate the dissipation constant against measured dHbar/dp over the
  // initial gradient range (max principle keeps |v_x| inside it; factor 2 margin)
  double qmax = 0;
  for (int i = 0; i + 1 < nx; ++i) qmax = std::max(qmax, std::abs(out.v[i + 1] - out.v[i]) / dx);
  double qcal = 2.0 * qmax + 1e-6;
  double c = 1e-12;
  {
    const double dq = std::max(1e-6, 1e-4 * qcal);
    for (int i = 0; i < nx; i += std::max(1, nx / 16))
      for (double q : {-qcal, -0.5 * qcal, 0.5 * qcal, qcal}) {
        double hp = H.evaluate1d(out.xs[i], q + dq), hm = H.evaluate1d(out.xs[i], q - dq);
        c = std::max(c, std::abs(hp - hm) / (2 * dq));
      }
  }

  int steps = std::max(1, static_cast<int>(std::ceil(t / (cfl * dx / c))));
  double dt = t / steps;
  out.dt = dt;
  out.steps = steps;

  std::vector<double> cur = out.v, nxt(nx);
  for (int s = 0; s < steps; ++s) {
    double step_qmax = 0;
    for (int i = 0; i < nx; ++i) {
      double vm = (i == 0) ? 2 * cur[0] - cur[1] : cur[i - 1];
      double vp = (i == nx - 1) ? 2 * cur[nx - 1] - cur[nx - 2] : cur[i + 1];
      double q = (vp - vm) / (2 * dx);
      step_qmax = std::max(step_qmax, std::abs(q));
      nxt[i] = cur[i] + dt * (H.evaluate1d(out.xs[i], q) + c * (vp - 2 * cur[i] + vm) / (2 * dx));
    }
    if (step_qmax > qcal)
      fail(ErrorCode::UnstableStep,
           "gradient escaped the calibrated range; dissipation too small");
    cur.swap(nxt);
  }
  out.v = std::move(cur);
  return out;
}

double hopf_lax(const EffectiveLagrangian& L, const std::function<double(double)>& h, double t,
                double x) {
  const EffectiveHamiltonian& H = L.hamiltonian();
  if (H.model().n != 1) fail(ErrorCode::DomainError, "hopf-lax supports n = 1");
  if (!H.model().sigma_x_independent)
    fail(ErrorCode::NotXIndependent, "hopf-lax requires x-independent sigma");
  if (!(t > 0)) fail(ErrorCode::DomainError, "t must be positive");

  const double chat = std::max(L.c_hat(), 1e-8);
  double radius = 4.0 * std::sqrt(chat * t) + 1e-8;
  const int pts = 513;

  auto phi = [&](double y) { return h(y) - t * L.value1d(0.0, (y - x) / t); };

  for (int expand = 0; expand < 2; ++expand) {
    double osc = 0, hmin = std::numeric_limits<double>::infinity(), hmax = -hmin;
    for (int i = 0; i < pts; ++i) {
      double y = x - radius + 2 * radius * i / (pts - 1);
      double hv = h(y);
      hmin = std::min(hmin, hv);
      hmax = std::max(hmax, hv);
    }
    osc = hmax - hmin;
    double needed = 1.3 * std::sqrt(8.0 * std::max(osc, 1e-12) * chat * t);
    if (needed <= radius) break;
    radius = needed;
  }

  double center = x, halfwidth = radius;
  double best = -std::numeric_limits<double>::infinity(), besty = x;
  for (int level = 0; level < 3; ++level) {
    double spacing = 2 * halfwidth / (pts - 1);
    for (int i = 0; i < pts; ++i) {
      double y = center - halfwidth + spacing * i;
      double val = phi(y);
      if (val > best) {
        best = val;
        besty = y;
      }
    }
    center = besty;
    halfwidth = 2.5 * spacing;
  }
  // parabolic polish
  double spacing = 2 * halfwidth / (pts - 1);
  double fm = phi(besty - spacing), f0 = phi(besty), fp = phi(besty + spacing);
  double denom = fm - 2 * f0 + fp;
  if (denom < 0) {
    double shift = 0.5 * (fm - fp) / denom;
    shift = std::clamp(shift, -1.0, 1.0);
    best = std::max(best, phi(besty + shift * spacing));
  }
  return best;
}

DualityReport rate_from_duality_check(const EffectiveLagrangian& L, double x0, double x, double t,
                                      int family_size, double tol) {
  const EffectiveHamiltonian& H = L.hamiltonian();
  if (H.model().n != 1) fail(ErrorCode::DomainError, "duality check supports n = 1");
  const bool xindep = H.model().sigma_x_independent;

  std::vector<double> vx0{x0}, vx{x};
  RateFunctionResult rate =
      xindep ? rate_x_independent(L, vx0, vx, t) : rate_general(L, vx0, vx, t);

  // rate profile used for the capped-rate test function (proxy when x-dependent)
  auto rate_at = [&](double y) { return t * L.value1d(xindep ? 0.0 : x0, (y - x0) / t); };
  const double Ix = rate_at(x);

  std::vector<std::function<double(double)>> family;
  family.emplace_back([](double) { return 0.0; });
  family.emplace_back([rate_at, Ix](double y) { return std::min(rate_at(y), Ix); });
  const double wbase = std::max(std::abs(x - x0), std::sqrt(std::max(L.nu_hat(), 1e-8) * t));
  for (double amp : {0.5, 0.75, 1.0, 1.25, 1.5, 2.0})
    for (double wid : {0.25, 0.5, 1.0}) {
      double A = amp * std::max(Ix, 1e-6);
      double W = wid * wbase;
      family.emplace_back(
          [A, W, x](double y) { return A * std::max(0.0, 1.0 - std::abs(y - x) / W); });
      if (static_cast<int>(family.size()) >= family_size) break;
    }
  while (static_cast<int>(family.size()) > family_size) family.pop_back();

  double duality = -std::numeric_limits<double>::infinity();
  for (const auto& hf : family) {
    double vh;
    if (xindep) {
      vh = hopf_lax(L, hf, t, x0);
    } else {
      double lo = std::min(x0, x), hi = std::max(x0, x);
      double pad = 3.0 * std::sqrt(std::max(L.c_hat(), 1e-8) * t) + 0.5 * (hi - lo) + 0.5;
      Pde1dSolution sol = solve_effective_pde(H, hf, t, lo - pad, hi + pad, 401, 0.5);
      vh = sol.interpolate(x0);
    }
    duality = std::max(duality, hf(x) - vh);
  }

  DualityReport rep;
  rep.duality_value = duality;
  rep.rate_value = rate.value;
  rep.family_size = static_cast<int>(family.size());
  rep.gap = (rate.value - duality) / std::max(rate.value, 1e-12);
  rep.lower_bound_ok = duality <= rate.value + tol;
  return rep;
}

}  // namespace fastvol
