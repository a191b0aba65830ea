#include "fastvol/invariant_measure.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <vector>

#include "fastvol/errors.hpp"

namespace fastvol {

namespace {

struct Stencil1 {
  // centered first-derivative weights by offset
  std::vector<std::pair<int, double>> d1;
  std::vector<std::pair<int, double>> d2;
};

Stencil1 make_stencil(int order, double h) {
  Stencil1 s;
  if (order == 2) {
    s.d1 = {{-1, -1.0 / (2 * h)}, {1, 1.0 / (2 * h)}};
    s.d2 = {{-1, 1.0 / (h * h)}, {0, -2.0 / (h * h)}, {1, 1.0 / (h * h)}};
  } else if (order == 4) {
    s.d1 = {{-2, 1.0 / (12 * h)}, {-1, -8.0 / (12 * h)}, {1, 8.0 / (12 * h)}, {2, -1.0 / (12 * h)}};
    s.d2 = {{-2, -1.0 / (12 * h * h)},
            {-1, 16.0 / (12 * h * h)},
            {0, -30.0 / (12 * h * h)},
            {1, 16.0 / (12 * h * h)},
            {2, -1.0 / (12 * h * h)}};
  } else {
    fail(ErrorCode::DomainError, "finite-difference order must be 2 or 4");
  }
  return s;
}

}  // namespace

InvariantMeasure solve_stationary_fokker_planck(const TorusGrid& grid, const CoefY& a,
                                                const CoefY& drift, double tol, int order) {
  const int m = grid.dim();
  const std::size_t N = grid.size();
  if (grid.shape()[0] < 16)
    fail(ErrorCode::DomainError, "invariant measure solve needs >= 16 nodes per axis");

  // node-sampled coefficients
  std::vector<double> av(N * static_cast<std::size_t>(m) * m);
  std::vector<double> bv(N * static_cast<std::size_t>(m));
  {
    std::vector<double> y(m), abuf(static_cast<std::size_t>(m) * m), bbuf(m);
    for (std::size_t k = 0; k < N; ++k) {
      grid.coords(k, y);
      a(y, abuf);
      drift(y, bbuf);
      for (int i = 0; i < m * m; ++i) av[k * m * m + i] = abuf[i];
      for (int i = 0; i < m; ++i) bv[k * m + i] = bbuf[i];
    }
  }

  std::vector<Stencil1> st;
  st.reserve(m);
  for (int ax = 0; ax < m; ++ax) st.push_back(make_stencil(order, grid.spacing(ax)));

  // rows: operator at node k; columns touched via the product rule on (a mu), (b mu)
  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> trips;
  trips.reserve(N * (static_cast<std::size_t>(m) * m * 25 + 1));
  const auto n1 = static_cast<Eigen::Index>(N + 1);
  for (std::size_t k = 0; k < N; ++k) {
    for (int i = 0; i < m; ++i) {
      // - D_i D_j (a_ij mu), diagonal i == j uses the second-derivative stencil
      for (int j = 0; j < m; ++j) {
        if (i == j) {
          for (auto [off, w] : st[i].d2) {
            std::size_t col = grid.neighbor(k, i, off);
            trips.emplace_back(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(col),
                               -w * av[col * m * m + static_cast<std::size_t>(i) * m + j]);
          }
        } else {
          for (auto [oi, wi] : st[i].d1)
            for (auto [oj, wj] : st[j].d1) {
              std::size_t col = grid.neighbor(grid.neighbor(k, i, oi), j, oj);
              trips.emplace_back(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(col),
                                 -wi * wj * av[col * m * m + static_cast<std::size_t>(i) * m + j]);
            }
        }
      }
      // + D_i (b_i mu)
      for (auto [off, w] : st[i].d1) {
        std::size_t col = grid.neighbor(k, i, off);
        trips.emplace_back(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(col),
                           w * bv[col * m + static_cast<std::size_t>(i)]);
      }
    }
  }
  // bordered row/column: mass constraint and its multiplier
  const double vol = grid.cell_volume();
  for (std::size_t k = 0; k < N; ++k) {
    trips.emplace_back(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(k), vol);
    trips.emplace_back(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(N), 1.0);
  }

  Eigen::SparseMatrix<double> M(n1, n1);
  M.setFromTriplets(trips.begin(), trips.end());
  M.makeCompressed();

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(M);
  lu.factorize(M);
  if (lu.info() != Eigen::Success)
    fail(ErrorCode::NoConvergence, "sparse factorization of the stationary operator failed");

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n1);
  rhs[static_cast<Eigen::Index>(N)] = 1.0;
  Eigen::VectorXd sol = lu.solve(rhs);

  // one step of iterative refinement against the full bordered system
  Eigen::VectorXd resid = rhs - M * sol;
  sol += lu.solve(resid);

  GridFunction mu(grid);
  for (std::size_t k = 0; k < N; ++k) mu[k] = sol[static_cast<Eigen::Index>(k)];

  double mass = mu.integral();
  if (!(std::abs(mass) > 0)) fail(ErrorCode::NoConvergence, "null mass in stationary solve");
  for (auto& v : mu.values()) v /= mass;

  // residual of the unbordered operator
  Eigen::VectorXd muv(n1);
  for (std::size_t k = 0; k < N; ++k) muv[static_cast<Eigen::Index>(k)] = mu[k];
  muv[static_cast<Eigen::Index>(N)] = 0.0;
  Eigen::VectorXd Am = M * muv;
  double rmax = 0, mumax = mu.max_abs();
  for (std::size_t k = 0; k < N; ++k) rmax = std::max(rmax, std::abs(Am[static_cast<Eigen::Index>(k)]));
  if (rmax > tol * std::max(1e-300, mumax))
    fail(ErrorCode::NoConvergence,
         "stationary residual " + std::to_string(rmax) + " above tolerance");

  if (mu.min() < -tol * mumax)
    fail(ErrorCode::NegativeDensity,
         "density undershoot " + std::to_string(mu.min()) + "; grid under-resolved");

  InvariantMeasure out;
  out.density = std::move(mu);
  out.residual_norm = rmax;
  out.mass = out.density.integral();
  return out;
}

InvariantMeasure solve_invariant_measure(const VolatilityModel& model, const TorusGrid& grid,
                                         double tol, int order) {
  if (grid.dim() != model.m)
    fail(ErrorCode::GridMismatch, "grid dimension does not match model.m");
  const int m = model.m, r = model.r;
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
  return solve_stationary_fokker_planck(grid, a, model.b, tol, order);
}

double h_bar_supercritical(const VolatilityModel& model, const InvariantMeasure& mu,
                           std::span<const double> x, std::span<const double> p) {
  const TorusGrid& grid = mu.density.grid();
  if (grid.dim() != model.m)
    fail(ErrorCode::GridMismatch, "measure grid does not match model fast dimension");
  std::vector<double> y(model.m);
  std::vector<double> acc(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    grid.coords(k, y);
    acc[k] = model.sigma_quad(x, y, p) * mu.density[k];
  }
  GridFunction f(grid, std::move(acc));
  return f.integral();
}

}  // namespace fastvol
