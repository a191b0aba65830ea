#include "fastvol/effective_hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fastvol/errors.hpp"
#include "fastvol/rng.hpp"

namespace fastvol {

namespace {

std::string memo_key(std::span<const double> x, std::span<const double> p, double round) {
  std::string key;
  key.reserve((x.size() + p.size()) * sizeof(long long));
  auto push = [&key, round](double v) {
    long long q = static_cast<long long>(std::llround(v / round));
    char buf[sizeof(long long)];
    std::memcpy(buf, &q, sizeof buf);
    key.append(buf, sizeof buf);
  };
  for (double v : x) push(v);
  key.push_back('|');
  for (double v : p) push(v);
  return key;
}

std::vector<std::vector<double>> probe_points(int n) {
  std::vector<std::vector<double>> xs;
  xs.emplace_back(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (double v : {0.7, -0.7, 1.4, -1.4}) {
      std::vector<double> x(n, 0.0);
      x[i] = v;
      xs.push_back(x);
    }
  return xs;
}

std::vector<std::vector<double>> unit_p(int n) {
  std::vector<std::vector<double>> ps;
  for (int i = 0; i < n; ++i) {
    std::vector<double> e(n, 0.0);
    e[i] = 1.0;
    ps.push_back(e);
    e[i] = -1.0;
    ps.push_back(e);
  }
  if (n > 1) {
    Xoshiro256pp rng(0xc0ffee);
    for (int k = 0; k < 6; ++k) {
      std::vector<double> v(n);
      double norm = 0;
      for (auto& c : v) {
        c = rng.uniform_sym();
        norm += c * c;
      }
      norm = std::sqrt(norm);
      if (norm < 1e-6) continue;
      for (auto& c : v) c /= norm;
      ps.push_back(v);
    }
  }
  return ps;
}

}  // namespace

EffectiveHamiltonian::EffectiveHamiltonian(VolatilityModel model, Regime regime, TorusGrid grid,
                                           Options opt)
    : model_(std::move(model)), regime_(regime), grid_(std::move(grid)), opt_(std::move(opt)) {
  if (grid_.dim() != model_.m) fail(ErrorCode::GridMismatch, "grid dimension != model.m");

  // measured coercivity constants on this grid
  {
    std::vector<double> y(model_.m);
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    auto xs = probe_points(model_.n);
    auto ps = unit_p(model_.n);
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      grid_.coords(k, y);
      for (const auto& x : xs)
        for (const auto& p : ps) {
          double v = model_.sigma_quad(x, y, p);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
    }
    nu_hat_ = lo;
    c_hat_ = hi;
  }

  switch (regime_.kind) {
    case RegimeKind::Supercritical: {
      measure_ = std::make_shared<InvariantMeasure>(
          solve_invariant_measure(model_, grid_, 1e-8, 4));
      method_ = "supercritical-measure-quadrature";
      break;
    }
    case RegimeKind::Critical: {
      method_ = "critical-eigenvalue";
      comparison_warning_ =
          !(model_.sigma_x_independent || model_.uncorrelated || nu_hat_ > 1e-12);
      break;
    }
    case RegimeKind::Subcritical: {
      if (model_.uncorrelated) {
        sub_path_ = SubPath::UncorrelatedMax;
        method_ = "subcritical-max-formula";
      } else if (model_.n == 1 && model_.m == 1 && model_.r == 1) {
        // explicit corrector path needs sigma >= 0, tau > 0
        bool ok = true;
        std::vector<double> y(1), sv(1), tv(1);
        auto xs = probe_points(1);
        for (std::size_t k = 0; k < grid_.size() && ok; ++k) {
          grid_.coords(k, y);
          model_.tau(y, tv);
          if (!(tv[0] > 0)) ok = false;
          for (const auto& x : xs) {
            model_.sigma(x, y, sv);
            if (sv[0] < -1e-12) ok = false;
          }
        }
        sub_path_ = ok ? SubPath::ClosedForm1d : SubPath::Solver;
        method_ = ok ? "subcritical-closed-1d" : "subcritical-lax-friedrichs";
      } else {
        sub_path_ = SubPath::Solver;
        method_ = "subcritical-lax-friedrichs";
      }
      break;
    }
  }
}

std::optional<double> EffectiveHamiltonian::nu() const {
  if (nu_hat_ > 1e-12) return nu_hat_;
  return std::nullopt;
}

double EffectiveHamiltonian::evaluate1d(double x, double p) const {
  return evaluate(std::span<const double>(&x, 1), std::span<const double>(&p, 1));
}

double EffectiveHamiltonian::supercritical_form(std::span<const double> x,
                                                std::span<const double> p) const {
  const int n = model_.n, r = model_.r;
  std::string key = memo_key(x, {}, opt_.memo_round);
  std::vector<double> M;
  {
    std::lock_guard<std::mutex> lk(memo_mutex_);
    auto it = form_memo_.find(key);
    if (it != form_memo_.end()) M = it->second;
  }
  if (M.empty()) {
    M.assign(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> y(model_.m), sv(static_cast<std::size_t>(n) * r);
    const auto& dens = measure_->density;
    const double vol = grid_.cell_volume();
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      grid_.coords(k, y);
      model_.sigma(x, y, sv);
      double w = dens[k] * vol;
      for (int i = 0; i < n; ++i)
        for (int l = 0; l < n; ++l) {
          double acc = 0;
          for (int j = 0; j < r; ++j)
            acc += sv[static_cast<std::size_t>(i) * r + j] * sv[static_cast<std::size_t>(l) * r + j];
          M[static_cast<std::size_t>(i) * n + l] += acc * w;
        }
    }
    std::lock_guard<std::mutex> lk(memo_mutex_);
    form_memo_.emplace(std::move(key), M);
  }
  double h = 0;
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < n; ++l) h += p[i] * M[static_cast<std::size_t>(i) * n + l] * p[l];
  return h;
}

double EffectiveHamiltonian::compute(std::span<const double> x, std::span<const double> p) const {
  switch (regime_.kind) {
    case RegimeKind::Supercritical:
      return supercritical_form(x, p);
    case RegimeKind::Critical:
      return solve_cell_critical_eigen(model_, grid_, x, p, opt_.tol).h_bar;
    case RegimeKind::Subcritical: {
      switch (sub_path_) {
        case SubPath::UncorrelatedMax:
          return h_bar_uncorrelated_max(model_, grid_, x, p);
        case SubPath::ClosedForm1d: {
          std::vector<double> xv(x.begin(), x.end());
          auto sig = [this, xv](double yv) {
            double out;
            model_.sigma(xv, std::span<const double>(&yv, 1), std::span<double>(&out, 1));
            return out;
          };
          auto tau = [this](double yv) {
            double out;
            model_.tau(std::span<const double>(&yv, 1), std::span<double>(&out, 1));
            return out;
          };
          return h_bar_subcritical_closed_1d(sig, tau, p[0], opt_.lpv_quad_points);
        }
        case SubPath::Solver:
          return solve_cell_subcritical(model_, grid_, x, p, opt_.delta_schedule, opt_.tol).h_bar;
      }
      return 0;
    }
  }
  return 0;
}

double EffectiveHamiltonian::evaluate(std::span<const double> x, std::span<const double> p) const {
  if (static_cast<int>(x.size()) != model_.n || static_cast<int>(p.size()) != model_.n)
    fail(ErrorCode::DimensionMismatch, "evaluate expects n-dimensional x and p");
  double pmax = 0;
  for (double v : p) pmax = std::max(pmax, std::abs(v));
  if (pmax < 1e-14) return 0.0;  // Hbar(x, 0) = 0

  std::string key = memo_key(x, p, opt_.memo_round);
  {
    std::lock_guard<std::mutex> lk(memo_mutex_);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
  }
  double v = compute(x, p);
  {
    std::lock_guard<std::mutex> lk(memo_mutex_);
    memo_.emplace(std::move(key), v);
  }
  return v;
}

}  // namespace fastvol
