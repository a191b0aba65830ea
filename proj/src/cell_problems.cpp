#include "fastvol/cell_problems.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fastvol/errors.hpp"
#include "fastvol/rng.hpp"
#include "fastvol/threading.hpp"

namespace fastvol {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// node-sampled ingredients of the perturbed generator
struct GeneratorData {
  std::vector<double> a;      // N * m * m, tau tau^T
  std::vector<double> tau;    // N * m * r
  std::vector<double> drift;  // N * m, b + 2 tau sigma^T p
  std::vector<double> sp;     // N * r, sigma^T p
  std::vector<double> V;      // N, |sigma^T p|^2
  double vmin = 0, vmax = 0;
};

GeneratorData sample_generator(const VolatilityModel& model, const TorusGrid& grid,
                               std::span<const double> x, std::span<const double> p) {
  const int m = model.m, r = model.r, n = model.n;
  const std::size_t N = grid.size();
  GeneratorData g;
  g.a.resize(N * static_cast<std::size_t>(m) * m);
  g.tau.resize(N * static_cast<std::size_t>(m) * r);
  g.drift.resize(N * static_cast<std::size_t>(m));
  g.sp.resize(N * static_cast<std::size_t>(r));
  g.V.resize(N);
  std::vector<double> y(m), bv(m), tv(static_cast<std::size_t>(m) * r),
      sv(static_cast<std::size_t>(n) * r);
  g.vmin = std::numeric_limits<double>::infinity();
  g.vmax = -g.vmin;
  for (std::size_t k = 0; k < N; ++k) {
    grid.coords(k, y);
    model.b(y, bv);
    model.tau(y, tv);
    model.sigma(x, y, sv);
    double* ak = &g.a[k * m * m];
    double* tk = &g.tau[k * static_cast<std::size_t>(m) * r];
    double* dk = &g.drift[k * m];
    double* spk = &g.sp[k * r];
    for (int i = 0; i < m * r; ++i) tk[i] = tv[i];
    for (int j = 0; j < r; ++j) {
      double col = 0;
      for (int i = 0; i < n; ++i) col += sv[static_cast<std::size_t>(i) * r + j] * p[i];
      spk[j] = col;
    }
    double vk = 0;
    for (int j = 0; j < r; ++j) vk += spk[j] * spk[j];
    g.V[k] = vk;
    g.vmin = std::min(g.vmin, vk);
    g.vmax = std::max(g.vmax, vk);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double acc = 0;
        for (int l = 0; l < r; ++l)
          acc += tv[static_cast<std::size_t>(i) * r + l] * tv[static_cast<std::size_t>(j) * r + l];
        ak[static_cast<std::size_t>(i) * m + j] = acc;
      }
    for (int i = 0; i < m; ++i) {
      double acc = bv[i];
      for (int j = 0; j < r; ++j) acc += 2.0 * tv[static_cast<std::size_t>(i) * r + j] * spk[j];
      dk[i] = acc;
    }
  }
  return g;
}

// centered discretization of  L w = tr(a D^2 w) + adv . D w  (coefficients at
// the row node), plus `diag_add` on the diagonal
Eigen::SparseMatrix<double> assemble_generator(const TorusGrid& grid, const GeneratorData& g,
                                               std::span<const double> adv, double diag_add,
                                               std::span<const double> vdiag, double vsign) {
  const int m = grid.dim();
  const std::size_t N = grid.size();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(N * (4 * static_cast<std::size_t>(m) * m + 2 * m + 1));
  for (std::size_t k = 0; k < N; ++k) {
    const double* ak = &g.a[k * m * m];
    double diag = diag_add + (vdiag.empty() ? 0.0 : vsign * vdiag[k]);
    for (int i = 0; i < m; ++i) {
      const double h = grid.spacing(i);
      const double aii = ak[static_cast<std::size_t>(i) * m + i];
      const double bi = adv[k * m + i];
      diag += -2.0 * aii / (h * h);
      trips.emplace_back(k, grid.neighbor(k, i, +1), aii / (h * h) + bi / (2 * h));
      trips.emplace_back(k, grid.neighbor(k, i, -1), aii / (h * h) - bi / (2 * h));
      for (int j = i + 1; j < m; ++j) {
        const double hj = grid.spacing(j);
        const double aij = ak[static_cast<std::size_t>(i) * m + j];
        if (aij == 0.0) continue;
        const double w = 2.0 * aij / (4 * h * hj);  // a_ij and a_ji together
        trips.emplace_back(k, grid.neighbor(grid.neighbor(k, i, +1), j, +1), w);
        trips.emplace_back(k, grid.neighbor(grid.neighbor(k, i, -1), j, -1), w);
        trips.emplace_back(k, grid.neighbor(grid.neighbor(k, i, +1), j, -1), -w);
        trips.emplace_back(k, grid.neighbor(grid.neighbor(k, i, -1), j, +1), -w);
      }
    }
    trips.emplace_back(k, k, diag);
  }
  Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  return A;
}

GridFunction corrector_from_positive(const TorusGrid& grid, const Eigen::VectorXd& g) {
  GridFunction w(grid);
  double g0 = g[0];
  for (std::size_t k = 0; k < grid.size(); ++k) w[k] = std::log(g[k]) - std::log(g0);
  return w;
}

}  // namespace

CriticalCellSolution solve_cell_critical_eigen(const VolatilityModel& model, const TorusGrid& grid,
                                               std::span<const double> x,
                                               std::span<const double> p, double tol) {
  if (grid.dim() != model.m) fail(ErrorCode::GridMismatch, "grid dimension != model.m");
  for (int d : grid.shape())
    if (d < 32) fail(ErrorCode::DomainError, "critical cell solve needs >= 32 nodes per axis");

  const std::size_t N = grid.size();
  GeneratorData g = sample_generator(model, grid, x, p);
  Eigen::SparseMatrix<double> A = assemble_generator(grid, g, g.drift, 0.0, g.V, +1.0);

  Eigen::SparseMatrix<double> I(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  I.setIdentity();

  double lam = g.vmax;
  double shift = g.vmax + 0.5 * (g.vmax - g.vmin) + std::max(1.0, 1e-3 * std::abs(g.vmax));
  Eigen::VectorXd v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(N));
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  double gap = std::numeric_limits<double>::infinity();
  int iters = 0;
  for (; iters < 100; ++iters) {
    Eigen::SparseMatrix<double> S = shift * I - A;
    lu.compute(S);
    if (lu.info() != Eigen::Success)
      fail(ErrorCode::NoConvergence, "factorization failed in eigenvalue iteration");
    Eigen::VectorXd w = lu.solve(v);
    double wmax = w.maxCoeff();
    if (!(wmax > 0) || w.minCoeff() <= 0)
      fail(ErrorCode::NonPositiveEigenfunction,
           "iterate lost positivity; grid too coarse for the Perron root");
    w /= wmax;
    Eigen::VectorXd Aw = A * w;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < N; ++k) {
      double q = Aw[k] / w[k];
      lo = std::min(lo, q);
      hi = std::max(hi, q);
    }
    lam = 0.5 * (lo + hi);
    gap = hi - lo;
    v = w;
    if (gap <= tol * std::max(1.0, std::abs(lam))) break;
    shift = hi + std::max(0.02 * gap, 1e-13);
  }
  if (gap > tol * std::max(1.0, std::abs(lam)))
    fail(ErrorCode::NoConvergence, "eigenvalue iteration exceeded budget (gap " +
                                       std::to_string(gap) + ")");

  CriticalCellSolution out;
  out.h_bar = lam;
  out.method = CellMethod::Eigenvalue;
  out.eigenfunction = GridFunction(grid, std::vector<double>(v.data(), v.data() + N));
  out.corrector = corrector_from_positive(grid, v);
  out.diag = {iters + 1, gap, true, "collatz-wielandt gap"};
  return out;
}

CriticalCellSolution solve_cell_critical_discount(const VolatilityModel& model,
                                                  const TorusGrid& grid,
                                                  std::span<const double> x,
                                                  std::span<const double> p,
                                                  std::span<const double> delta_schedule,
                                                  double tol) {
  if (grid.dim() != model.m) fail(ErrorCode::GridMismatch, "grid dimension != model.m");
  if (delta_schedule.size() < 2)
    fail(ErrorCode::DomainError, "delta schedule needs at least two entries");
  for (std::size_t i = 1; i < delta_schedule.size(); ++i)
    if (!(delta_schedule[i] < delta_schedule[i - 1]))
      fail(ErrorCode::DomainError, "delta schedule must be strictly decreasing");
  if (!(delta_schedule.back() <= 1e-3))
    fail(ErrorCode::DomainError, "delta schedule must reach <= 1e-3");

  const int m = model.m, r = model.r;
  const std::size_t N = grid.size();
  GeneratorData g = sample_generator(model, grid, x, p);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
  std::vector<double> adv(N * static_cast<std::size_t>(m));
  std::vector<double> beta(N * static_cast<std::size_t>(r));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(N));
  std::vector<std::pair<double, double>> svals;
  int total_iters = 0;
  double prev_delta = 0;

  for (double delta : delta_schedule) {
    if (prev_delta > 0) {
      // carry the 1/delta growth of the mean into the warm start
      double s_prev = prev_delta * w.mean();
      w.array() += s_prev * (1.0 / delta - 1.0 / prev_delta);
    }
    bool converged = false;
    for (int it = 0; it < 80; ++it) {
      ++total_iters;
      // policy improvement: beta = -tau^T Dw (centered)
      for (std::size_t k = 0; k < N; ++k) {
        const double* tk = &g.tau[k * static_cast<std::size_t>(m) * r];
        double dw[8];
        for (int i = 0; i < m; ++i) {
          double h = grid.spacing(i);
          dw[i] = (w[grid.neighbor(k, i, +1)] - w[grid.neighbor(k, i, -1)]) / (2 * h);
        }
        for (int j = 0; j < r; ++j) {
          double acc = 0;
          for (int i = 0; i < m; ++i) acc += tk[static_cast<std::size_t>(i) * r + j] * dw[i];
          beta[k * r + j] = -acc;
        }
      }
      // policy evaluation: (delta - tr(a D^2) + (2 tau beta - drift).D) w = V - |beta|^2
      double bnorm;
      for (std::size_t k = 0; k < N; ++k) {
        const double* tk = &g.tau[k * static_cast<std::size_t>(m) * r];
        bnorm = 0;
        for (int j = 0; j < r; ++j) bnorm += beta[k * r + j] * beta[k * r + j];
        rhs[k] = g.V[k] - bnorm;
        for (int i = 0; i < m; ++i) {
          double acc = -g.drift[k * m + i];
          for (int j = 0; j < r; ++j)
            acc += 2.0 * tk[static_cast<std::size_t>(i) * r + j] * beta[k * r + j];
          adv[k * m + i] = -acc;  // assemble_generator adds +adv.Dw to L, we need -(...)
        }
      }
      // operator is delta - L with L = tr(aD^2) + (-adv).D; assemble -A + delta I
      Eigen::SparseMatrix<double> A = assemble_generator(grid, g, adv, 0.0, {}, 0.0);
      Eigen::SparseMatrix<double> M = -A;
      for (std::size_t k = 0; k < N; ++k) M.coeffRef(k, k) += delta;
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(M);
      if (lu.info() != Eigen::Success)
        fail(ErrorCode::NoConvergence, "policy evaluation factorization failed");
      Eigen::VectorXd wn = lu.solve(rhs);
      double diff = (wn - w).cwiseAbs().maxCoeff();
      w = wn;
      if (diff <= 1e-11 * std::max(1.0, w.cwiseAbs().maxCoeff())) {
        converged = true;
        break;
      }
    }
    if (!converged)
      fail(ErrorCode::NoConvergence,
           "policy iteration did not settle at delta=" + std::to_string(delta));
    double dwmax = delta * w.cwiseAbs().maxCoeff();
    double bound = g.vmax + tol * std::max(1.0, g.vmax);
    if (dwmax > bound)
      fail(ErrorCode::BoundViolation, "|delta w| = " + std::to_string(dwmax) +
                                          " exceeds max |sigma^T p|^2 = " + std::to_string(g.vmax));
    svals.emplace_back(delta, delta * w.mean());
    prev_delta = delta;
  }

  auto [d1, s1] = svals[svals.size() - 2];
  auto [d0, s0] = svals[svals.size() - 1];
  double hbar = (d1 * s0 - d0 * s1) / (d1 - d0);

  CriticalCellSolution out;
  out.h_bar = hbar;
  out.method = CellMethod::Discount;
  GridFunction corr(grid);
  for (std::size_t k = 0; k < N; ++k) corr[k] = w[k] - w[0];
  out.corrector = corr;
  GridFunction eig(grid);
  double emax = 0;
  for (std::size_t k = 0; k < N; ++k) emax = std::max(emax, corr[k]);
  for (std::size_t k = 0; k < N; ++k) eig[k] = std::exp(corr[k] - emax);
  out.eigenfunction = eig;
  out.diag = {total_iters, std::abs(s0 - s1), true, "delta extrapolation spread"};
  return out;
}

McEstimate feynman_kac_oracle(const VolatilityModel& model, std::span<const double> x,
                              std::span<const double> p, double t_horizon, long n_paths,
                              double dt, std::uint64_t seed, int threads) {
  if (!(t_horizon >= 10.0)) fail(ErrorCode::DomainError, "feynman-kac horizon must be >= 10");
  if (!(dt > 0) || dt > 1e-3 * t_horizon)
    fail(ErrorCode::DomainError, "need 0 < dt <= 1e-3 * t_horizon");
  if (n_paths < 100) fail(ErrorCode::DomainError, "need >= 100 paths");

  const long steps = static_cast<long>(std::llround(t_horizon / dt));
  const double dt_eff = t_horizon / static_cast<double>(steps);
  const double root2dt = std::sqrt(2.0 * dt_eff);
  const int m = model.m, r = model.r, n = model.n;

  std::vector<double> integrals(static_cast<std::size_t>(n_paths));

  const bool fast = model.kernel.has_value() && m == 1 && n == 1;
  if (fast) {
    const Trig1dKernel ker = *model.kernel;
    const double xf = ker.x_factor(x[0]);
    const double pv = p[0];
    const bool use_cos = ker.needs_cos();
    parallel_blocks(static_cast<std::size_t>(n_paths), threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        NormalSampler normal(path_seed(seed, i));
        double yv = 0.0, acc = 0.0;
        for (long s = 0; s < steps; ++s) {
          double sn = std::sin(kTwoPi * yv);
          double cs = use_cos ? std::cos(kTwoPi * yv) : 0.0;
          double drift = ker.b_val(sn, cs);
          double vk = 0, noise = 0;
          for (int j = 0; j < ker.r; ++j) {
            double sj = ker.sigma_col(j, xf, sn, cs) * pv;
            double tj = ker.tau_col(j, sn, cs);
            vk += sj * sj;
            drift += 2.0 * tj * sj;
            noise += tj * normal();
          }
          acc += vk * dt_eff;
          yv += drift * dt_eff + root2dt * noise;
          yv -= std::floor(yv);
        }
        integrals[i] = acc;
      }
    });
  } else {
    parallel_blocks(static_cast<std::size_t>(n_paths), threads, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> y(m), bv(m), tv(static_cast<std::size_t>(m) * r),
          sv(static_cast<std::size_t>(n) * r), sp(r), xi(r);
      for (std::size_t i = lo; i < hi; ++i) {
        NormalSampler normal(path_seed(seed, i));
        std::fill(y.begin(), y.end(), 0.0);
        double acc = 0.0;
        for (long s = 0; s < steps; ++s) {
          model.b(y, bv);
          model.tau(y, tv);
          model.sigma(x, y, sv);
          double vk = 0;
          for (int j = 0; j < r; ++j) {
            double col = 0;
            for (int l = 0; l < n; ++l) col += sv[static_cast<std::size_t>(l) * r + j] * p[l];
            sp[j] = col;
            vk += col * col;
          }
          acc += vk * dt_eff;
          for (int j = 0; j < r; ++j) xi[j] = normal();
          for (int l = 0; l < m; ++l) {
            double drift = bv[l];
            double noise = 0;
            for (int j = 0; j < r; ++j) {
              drift += 2.0 * tv[static_cast<std::size_t>(l) * r + j] * sp[j];
              noise += tv[static_cast<std::size_t>(l) * r + j] * xi[j];
            }
            y[l] += drift * dt_eff + root2dt * noise;
            y[l] -= std::floor(y[l]);
          }
        }
        integrals[i] = acc;
      }
    });
  }

  double imax = -std::numeric_limits<double>::infinity();
  for (double v : integrals) {
    if (!std::isfinite(v)) fail(ErrorCode::CoefficientError, "non-finite functional along a path");
    imax = std::max(imax, v);
  }
  std::vector<double> wts(integrals.size());
  for (std::size_t i = 0; i < integrals.size(); ++i) wts[i] = std::exp(integrals[i] - imax);
  double mean = pairwise_sum(wts.data(), wts.size()) / static_cast<double>(n_paths);
  std::vector<double> sq(wts.size());
  for (std::size_t i = 0; i < wts.size(); ++i) sq[i] = (wts[i] - mean) * (wts[i] - mean);
  double var = pairwise_sum(sq.data(), sq.size()) / (static_cast<double>(n_paths) - 1.0);

  McEstimate est;
  est.value = (imax + std::log(mean)) / t_horizon;
  est.std_error = std::sqrt(var / static_cast<double>(n_paths)) / (mean * t_horizon);
  est.n = n_paths;
  est.seed = seed;
  est.notes = "feynman-kac log-functional, euler dt=" + std::to_string(dt_eff);
  return est;
}

InvariantMeasure critical_invariant_measure(const VolatilityModel& model, const TorusGrid& grid,
                                            const CriticalCellSolution& solution,
                                            std::span<const double> x, std::span<const double> p,
                                            double tol) {
  if (!solution.diag.converged) fail(ErrorCode::DomainError, "cell solution not converged");
  const int m = model.m, r = model.r, n = model.n;

  // gradient fields of the corrector, one per axis, interpolated off-node
  std::vector<GridFunction> grad;
  grad.reserve(m);
  const TorusGrid& cgrid = solution.corrector.grid();
  for (int i = 0; i < m; ++i) grad.emplace_back(cgrid);
  {
    std::vector<double> dw(m);
    for (std::size_t k = 0; k < cgrid.size(); ++k) {
      solution.corrector.gradient_at(k, dw);
      for (int i = 0; i < m; ++i) grad[i][k] = dw[i];
    }
  }

  CoefY a = [&model, m, r](std::span<const double> y, std::span<double> out) {
    std::vector<double> t(static_cast<std::size_t>(m) * r);
    model.tau(y, t);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double acc = 0;
        for (int l = 0; l < r; ++l)
          acc += t[static_cast<std::size_t>(i) * r + l] * t[static_cast<std::size_t>(j) * r + l];
        out[static_cast<std::size_t>(i) * m + j] = acc;
      }
  };
  std::vector<double> xcopy(x.begin(), x.end());
  std::vector<double> pcopy(p.begin(), p.end());
  CoefY drift = [&model, &grad, xcopy, pcopy, m, r, n](std::span<const double> y,
                                                       std::span<double> out) {
    std::vector<double> bv(m), tv(static_cast<std::size_t>(m) * r),
        sv(static_cast<std::size_t>(n) * r), dw(m);
    model.b(y, bv);
    model.tau(y, tv);
    model.sigma(xcopy, y, sv);
    for (int i = 0; i < m; ++i) dw[i] = grad[i].interpolate(y);
    for (int i = 0; i < m; ++i) {
      double acc = bv[i];
      for (int j = 0; j < r; ++j) {
        double spj = 0;
        for (int l = 0; l < n; ++l) spj += sv[static_cast<std::size_t>(l) * r + j] * pcopy[l];
        double twj = 0;
        for (int l = 0; l < m; ++l) twj += tv[static_cast<std::size_t>(l) * r + j] * dw[l];
        acc += 2.0 * tv[static_cast<std::size_t>(i) * r + j] * (spj + twj);
      }
      out[i] = acc;
    }
  };
  return solve_stationary_fokker_planck(grid, a, drift, tol, 4);
}

double critical_measure_identity(const VolatilityModel& model,
                                 const CriticalCellSolution& solution, const InvariantMeasure& mu,
                                 std::span<const double> x, std::span<const double> p) {
  const TorusGrid& grid = mu.density.grid();
  const int m = model.m, r = model.r;
  std::vector<double> y(m), tv(static_cast<std::size_t>(m) * r), dw(m);
  GridFunction f(grid);
  const bool same_grid = grid.size() == solution.corrector.grid().size() &&
                         grid.shape() == solution.corrector.grid().shape();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    grid.coords(k, y);
    model.tau(y, tv);
    if (same_grid) {
      solution.corrector.gradient_at(k, dw);
    } else {
      for (int i = 0; i < m; ++i) {
        // centered interpolated gradient on the corrector grid
        double h = solution.corrector.grid().spacing(i);
        std::vector<double> yp(y.begin(), y.end()), ym(y.begin(), y.end());
        yp[i] += h;
        ym[i] -= h;
        dw[i] = (solution.corrector.interpolate(yp) - solution.corrector.interpolate(ym)) / (2 * h);
      }
    }
    double tw2 = 0;
    for (int j = 0; j < r; ++j) {
      double acc = 0;
      for (int i = 0; i < m; ++i) acc += tv[static_cast<std::size_t>(i) * r + j] * dw[i];
      tw2 += acc * acc;
    }
    f[k] = (model.sigma_quad(x, y, p) - tw2) * mu.density[k];
  }
  return f.integral();
}

namespace {

// one Gauss-Seidel pass in the lexicographic ordering selected by the
// direction bits (bit i set = axis i descending)
struct SweepWorkspace {
  const TorusGrid* grid;
  int m, r;
  std::vector<double> tau;  // N*m*r
  std::vector<double> sp;   // N*r
  std::vector<std::size_t> up, dn;  // N*m neighbor tables
  std::vector<double> spmax_row;    // max_y row norm of tau per axis
  double sup_sp = 0;                // max_y |sigma^T p|
};

double lf_residual(const SweepWorkspace& ws, const std::vector<double>& w, double delta,
                   std::span<const double> c, double* mean_out, double* supflux_out) {
  const std::size_t N = ws.grid->size();
  const int m = ws.m, r = ws.r;
  double rmax = 0, rsum = 0, supflux = 0;
  for (std::size_t k = 0; k < N; ++k) {
    double H = 0, diss = 0;
    double q[8];
    for (int i = 0; i < m; ++i) {
      double h = ws.grid->spacing(i);
      double wp = w[ws.up[k * m + i]], wm = w[ws.dn[k * m + i]];
      q[i] = (wp - wm) / (2 * h);
      diss += c[i] * (wp - 2 * w[k] + wm) / (2 * h);
    }
    double fn = 0;
    for (int j = 0; j < r; ++j) {
      double acc = ws.sp[k * r + j];
      for (int i = 0; i < m; ++i) acc += ws.tau[(k * m + i) * r + j] * q[i];
      fn += acc * acc;
    }
    H = fn;
    supflux = std::max(supflux, std::sqrt(fn));
    double res = delta * w[k] - H - diss;
    rsum += res;
    rmax = std::max(rmax, std::abs(res));
  }
  if (mean_out) *mean_out = rsum / static_cast<double>(N);
  if (supflux_out) *supflux_out = supflux;
  return rmax;
}

void lf_sweep(const SweepWorkspace& ws, std::vector<double>& w, double delta,
              std::span<const double> c, unsigned dir_bits) {
  const TorusGrid& grid = *ws.grid;
  const int m = ws.m, r = ws.r;
  double denom = delta;
  for (int i = 0; i < m; ++i) denom += c[i] / grid.spacing(i);
  std::vector<int> idx(m, 0);
  const auto& shape = grid.shape();
  bool done = false;
  while (!done) {
    // flat index of the current multi-index (respecting direction bits)
    std::size_t flat = 0;
    {
      std::size_t stride = 1;
      for (int i = m - 1; i >= 0; --i) {
        int pos = (dir_bits >> i) & 1 ? shape[i] - 1 - idx[i] : idx[i];
        flat += stride * static_cast<std::size_t>(pos);
        stride *= static_cast<std::size_t>(shape[i]);
      }
    }
    double H = 0, nsum = 0;
    double q[8];
    for (int i = 0; i < m; ++i) {
      double h = grid.spacing(i);
      double wp = w[ws.up[flat * m + i]], wm = w[ws.dn[flat * m + i]];
      q[i] = (wp - wm) / (2 * h);
      nsum += c[i] / (2 * h) * (wp + wm);
    }
    for (int j = 0; j < r; ++j) {
      double acc = ws.sp[flat * r + j];
      for (int i = 0; i < m; ++i) acc += ws.tau[(flat * m + i) * r + j] * q[i];
      H += acc * acc;
    }
    w[flat] = (H + nsum) / denom;

    // odometer
    done = true;
    for (int i = m - 1; i >= 0; --i) {
      if (++idx[i] < shape[i]) {
        done = false;
        break;
      }
      idx[i] = 0;
    }
  }
}

SweepWorkspace make_workspace(const VolatilityModel& model, const TorusGrid& grid,
                              std::span<const double> x, std::span<const double> p) {
  SweepWorkspace ws;
  ws.grid = &grid;
  ws.m = model.m;
  ws.r = model.r;
  const std::size_t N = grid.size();
  const int m = model.m, r = model.r, n = model.n;
  ws.tau.resize(N * static_cast<std::size_t>(m) * r);
  ws.sp.resize(N * static_cast<std::size_t>(r));
  ws.up.resize(N * static_cast<std::size_t>(m));
  ws.dn.resize(N * static_cast<std::size_t>(m));
  ws.spmax_row.assign(m, 0.0);
  std::vector<double> y(m), tv(static_cast<std::size_t>(m) * r), sv(static_cast<std::size_t>(n) * r);
  for (std::size_t k = 0; k < N; ++k) {
    grid.coords(k, y);
    model.tau(y, tv);
    model.sigma(x, y, sv);
    double spk2 = 0;
    for (int j = 0; j < r; ++j) {
      double col = 0;
      for (int l = 0; l < n; ++l) col += sv[static_cast<std::size_t>(l) * r + j] * p[l];
      ws.sp[k * r + j] = col;
      spk2 += col * col;
    }
    ws.sup_sp = std::max(ws.sup_sp, std::sqrt(spk2));
    for (int i = 0; i < m; ++i) {
      double rown = 0;
      for (int j = 0; j < r; ++j) {
        ws.tau[(k * m + i) * r + j] = tv[static_cast<std::size_t>(i) * r + j];
        rown += tv[static_cast<std::size_t>(i) * r + j] * tv[static_cast<std::size_t>(i) * r + j];
      }
      ws.spmax_row[i] = std::max(ws.spmax_row[i], std::sqrt(rown));
      ws.up[k * m + i] = grid.neighbor(k, i, +1);
      ws.dn[k * m + i] = grid.neighbor(k, i, -1);
    }
  }
  return ws;
}

// fixed point of the LF scheme at one delta; returns sweep count
int lf_fixed_point(const SweepWorkspace& ws, std::vector<double>& w, double delta,
                   std::vector<double>& c, double fp_tol, long max_sweeps, std::string& notes) {
  const int m = ws.m;
  const unsigned norders = 1u << m;
  int sweeps = 0;
  while (sweeps < max_sweeps) {
    for (unsigned d = 0; d < norders; ++d) lf_sweep(ws, w, delta, c, d);
    sweeps += static_cast<int>(norders);
    double mean_res, supflux;
    double rmax = lf_residual(ws, w, delta, c, &mean_res, &supflux);
    // deflate the constant error mode exactly
    if (std::abs(mean_res) > 0) {
      double shift = -mean_res / delta;
      for (auto& v : w) v += shift;
      rmax = lf_residual(ws, w, delta, c, &mean_res, &supflux);
    }
    // viscosity must dominate |dH/dq| at visited states
    bool bumped = false;
    for (int i = 0; i < m; ++i) {
      double needed = 2.0 * ws.spmax_row[i] * supflux * 1.1;
      if (needed > c[i]) {
        c[i] = 1.3 * needed;
        bumped = true;
      }
    }
    if (bumped) {
      notes += "viscosity bumped; ";
      continue;
    }
    double scale = 0;
    for (double v : w) scale = std::max(scale, std::abs(delta * v));
    if (rmax <= fp_tol * std::max(1.0, scale)) return sweeps;
  }
  fail(ErrorCode::NoConvergence, "lax-friedrichs sweeping exceeded " +
                                     std::to_string(max_sweeps) + " sweeps at delta=" +
                                     std::to_string(delta));
}

std::vector<double> prolong_to(const GridFunction& coarse, const TorusGrid& fine) {
  std::vector<double> out(fine.size());
  std::vector<double> y(fine.dim());
  for (std::size_t k = 0; k < fine.size(); ++k) {
    fine.coords(k, y);
    out[k] = coarse.interpolate(y);
  }
  return out;
}

}  // namespace

SubcriticalCellSolution solve_cell_subcritical(const VolatilityModel& model, const TorusGrid& grid,
                                               std::span<const double> x,
                                               std::span<const double> p,
                                               std::span<const double> delta_schedule, double tol) {
  if (grid.dim() != model.m) fail(ErrorCode::GridMismatch, "grid dimension != model.m");
  for (int d : grid.shape())
    if (d < 32) fail(ErrorCode::DomainError, "subcritical cell solve needs >= 32 nodes per axis");
  if (delta_schedule.size() < 2)
    fail(ErrorCode::DomainError, "delta schedule needs at least two entries");
  for (std::size_t i = 1; i < delta_schedule.size(); ++i)
    if (!(delta_schedule[i] < delta_schedule[i - 1]))
      fail(ErrorCode::DomainError, "delta schedule must be strictly decreasing");
  if (!(delta_schedule.back() <= 1e-3))
    fail(ErrorCode::DomainError, "delta schedule must reach <= 1e-3");

  const int m = model.m;
  const int nax = *std::max_element(grid.shape().begin(), grid.shape().end());
  const double fp_tol = 1e-9;
  const long max_sweeps = std::min<long>(3000000, std::max<long>(20000, 6L * nax * nax));

  SweepWorkspace ws = make_workspace(model, grid, x, p);
  std::vector<double> c(m);
  for (int i = 0; i < m; ++i)
    c[i] = std::max(1e-12, 2.0 * ws.spmax_row[i] * ws.sup_sp * 1.5);

  std::string notes;
  std::vector<std::pair<double, double>> svals;
  std::vector<double> w;
  double prev_delta = 0;
  int total_sweeps = 0;

  for (std::size_t di = 0; di < delta_schedule.size(); ++di) {
    double delta = delta_schedule[di];
    if (di == 0) {
      // coarse-to-fine cascade kills the slow smooth error modes cheaply
      std::vector<int> levels;
      for (int nl = nax; nl >= 64; nl /= 2) levels.push_back(nl);
      std::reverse(levels.begin(), levels.end());
      if (levels.empty() || levels.front() != nax) levels.push_back(nax);
      if (levels.size() > 1 || levels[0] != nax) {
        // run every level but the last on auxiliary uniform grids
        GridFunction carrier;
        for (std::size_t li = 0; li < levels.size(); ++li) {
          int nl = levels[li];
          if (nl == nax) break;
          TorusGrid cg = TorusGrid::uniform(m, nl);
          SweepWorkspace cw = make_workspace(model, cg, x, p);
          std::vector<double> wl =
              (li == 0) ? std::vector<double>(cg.size(), 0.0) : prolong_to(carrier, cg);
          std::vector<double> cl = c;
          total_sweeps += lf_fixed_point(cw, wl, delta, cl, 1e-7, max_sweeps, notes);
          carrier = GridFunction(cg, std::move(wl));
        }
        w = carrier.values().empty() ? std::vector<double>(grid.size(), 0.0)
                                     : prolong_to(carrier, grid);
      } else {
        w.assign(grid.size(), 0.0);
      }
    } else {
      double s_prev = svals.back().second;
      double shift = s_prev * (1.0 / delta - 1.0 / prev_delta);
      for (auto& v : w) v += shift;
    }
    total_sweeps += lf_fixed_point(ws, w, delta, c, fp_tol, max_sweeps, notes);
    double mean = pairwise_sum(w.data(), w.size()) / static_cast<double>(w.size());
    svals.emplace_back(delta, delta * mean);
    prev_delta = delta;
  }

  auto [d1, s1] = svals[svals.size() - 2];
  auto [d0, s0] = svals[svals.size() - 1];
  double hbar = (d1 * s0 - d0 * s1) / (d1 - d0);
  if (hbar < -tol)
    fail(ErrorCode::NegativeHbar, "extrapolated h_bar = " + std::to_string(hbar) + " < -tol");
  hbar = std::max(hbar, 0.0);

  SubcriticalCellSolution out;
  out.h_bar = hbar;
  out.h_zero = std::sqrt(hbar);
  GridFunction corr(grid);
  for (std::size_t k = 0; k < grid.size(); ++k) corr[k] = w[k] - w[0];
  out.corrector = std::move(corr);
  out.diag.iterations = total_sweeps;
  out.diag.residual = lf_residual(ws, w, d0, c, nullptr, nullptr);
  out.diag.converged = true;
  out.diag.notes = notes;
  out.delta_values = std::move(svals);
  return out;
}

double h_bar_subcritical_closed_1d(const std::function<double(double)>& sigma,
                                   const std::function<double(double)>& tau, double p,
                                   int quad_points) {
  if (quad_points < 9) fail(ErrorCode::DomainError, "need at least 9 quadrature points");
  const int q = quad_points;
  const double h = 1.0 / (q - 1);
  double int_st = 0, int_t = 0;
  for (int i = 0; i < q; ++i) {
    double y = i * h;
    double sv = sigma(y), tv = tau(y);
    if (!(tv > 0)) fail(ErrorCode::DomainError, "tau must be positive on [0,1]");
    if (sv < -1e-12) fail(ErrorCode::DomainError, "sigma must be nonnegative on [0,1]");
    double wgt = (i == 0 || i == q - 1) ? 0.5 : 1.0;
    int_st += wgt * sv / tv;
    int_t += wgt / tv;
  }
  int_st *= h;
  int_t *= h;
  double ratio = int_st / int_t;
  return ratio * ratio * p * p;
}

double h_bar_uncorrelated_max(const VolatilityModel& model, const TorusGrid& grid,
                              std::span<const double> x, std::span<const double> p) {
  if (!model.uncorrelated)
    fail(ErrorCode::DomainError, "max formula requires the tau sigma^T = 0 structure");
  std::vector<double> y(model.m);
  double best = -1;
  std::size_t arg = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    grid.coords(k, y);
    double v = model.sigma_quad(x, y, p);
    if (v > best) {
      best = v;
      arg = k;
    }
  }
  // parabolic refinement around the grid argmax, one pass per axis
  grid.coords(arg, y);
  std::vector<double> yy(y.begin(), y.end());
  for (int i = 0; i < model.m; ++i) {
    double h = grid.spacing(i);
    std::vector<double> ym(yy.begin(), yy.end()), yp(yy.begin(), yy.end());
    ym[i] -= h;
    yp[i] += h;
    double fm = model.sigma_quad(x, ym, p), f0 = model.sigma_quad(x, yy, p),
           fp = model.sigma_quad(x, yp, p);
    double denom = fm - 2 * f0 + fp;
    if (denom < 0) {
      double t = 0.5 * (fm - fp) / denom;
      t = std::clamp(t, -1.0, 1.0);
      yy[i] += t * h;
    }
  }
  best = std::max(best, model.sigma_quad(x, yy, p));
  return best;
}

}  // namespace fastvol
