#include "fastvol/mc_two_scale.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "fastvol/errors.hpp"
#include "fastvol/rng.hpp"
#include "fastvol/threading.hpp"

namespace fastvol {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void validate_config(const VolatilityModel& model, const SimConfig& cfg) {
  if (!(cfg.epsilon > 0) || cfg.epsilon > 1)
    fail(ErrorCode::DomainError, "epsilon must lie in (0, 1]");
  if (!(cfg.alpha > 1)) fail(ErrorCode::InvalidAlpha, "alpha must be > 1");
  if (!(cfg.t > 0)) fail(ErrorCode::DomainError, "t must be positive");
  if (cfg.n_paths < 100) fail(ErrorCode::DomainError, "need n_paths >= 100");
  double cap = 0.1 * std::pow(cfg.epsilon, cfg.alpha - 1.0);
  if (!(cfg.dt > 0) || cfg.dt > cap * (1 + 1e-12))
    fail(ErrorCode::StepTooLarge,
         "dt must satisfy 0 < dt <= 0.1 eps^(alpha-1) = " + std::to_string(cap));
  if (!cfg.x0.empty() && static_cast<int>(cfg.x0.size()) != model.n)
    fail(ErrorCode::DimensionMismatch, "x0 size != n");
  if (!cfg.y0.empty() && static_cast<int>(cfg.y0.size()) != model.m)
    fail(ErrorCode::DimensionMismatch, "y0 size != m");
}

double default_dt(double epsilon, double alpha, double t) {
  return std::min(0.1 * std::pow(epsilon, alpha - 1.0), t / 64.0);
}

namespace {

struct StepScales {
  long steps;
  double x_drift, x_noise, y_drift, y_noise;
};

StepScales make_scales(const SimConfig& cfg) {
  long steps = static_cast<long>(std::ceil(cfg.t / cfg.dt - 1e-12));
  double dt = cfg.t / static_cast<double>(steps);
  double fast = std::pow(cfg.epsilon, 1.0 - cfg.alpha);
  return {steps, cfg.epsilon * dt, std::sqrt(2.0 * cfg.epsilon * dt), fast * dt,
          std::sqrt(2.0 * fast * dt)};
}

void simulate_trig1d(const Trig1dKernel& ker, const SimConfig& cfg, double x_init, double y_init,
                     double* out) {
  const StepScales sc = make_scales(cfg);
  const bool use_cos = ker.needs_cos();
  const int r = ker.r;
  parallel_blocks(static_cast<std::size_t>(cfg.n_paths), cfg.threads,
                  [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t i = lo; i < hi; ++i) {
                      NormalSampler normal(path_seed(cfg.seed, i));
                      double x = x_init, y = y_init;
                      for (long s = 0; s < sc.steps; ++s) {
                        double sn = std::sin(kTwoPi * y);
                        double cs = use_cos ? std::cos(kTwoPi * y) : 0.0;
                        double xf = ker.x_factor(x);
                        double xi0 = normal();
                        double xi1 = (r == 2) ? normal() : 0.0;
                        double sx = ker.sigma_col(0, xf, sn, cs) * xi0;
                        double sy = ker.tau_col(0, sn, cs) * xi0;
                        if (r == 2) {
                          sx += ker.sigma_col(1, xf, sn, cs) * xi1;
                          sy += ker.tau_col(1, sn, cs) * xi1;
                        }
                        x += sc.x_drift * ker.phi0 + sc.x_noise * sx;
                        y += sc.y_drift * ker.b_val(sn, cs) + sc.y_noise * sy;
                        y -= std::floor(y);
                      }
                      out[i] = x;
                    }
                  });
}

void simulate_generic(const VolatilityModel& model, const SimConfig& cfg,
                      std::span<const double> x_init, std::span<const double> y_init,
                      double* out) {
  const StepScales sc = make_scales(cfg);
  const int n = model.n, m = model.m, r = model.r;
  parallel_blocks(
      static_cast<std::size_t>(cfg.n_paths), cfg.threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> x(n), y(m), ph(n), sv(static_cast<std::size_t>(n) * r), bv(m),
            tv(static_cast<std::size_t>(m) * r), xi(r);
        for (std::size_t i = lo; i < hi; ++i) {
          NormalSampler normal(path_seed(cfg.seed, i));
          std::copy(x_init.begin(), x_init.end(), x.begin());
          std::copy(y_init.begin(), y_init.end(), y.begin());
          for (long s = 0; s < sc.steps; ++s) {
            model.phi(x, y, ph);
            model.sigma(x, y, sv);
            model.b(y, bv);
            model.tau(y, tv);
            for (int j = 0; j < r; ++j) xi[j] = normal();
            for (int l = 0; l < n; ++l) {
              double noise = 0;
              for (int j = 0; j < r; ++j) noise += sv[static_cast<std::size_t>(l) * r + j] * xi[j];
              x[l] += sc.x_drift * ph[l] + sc.x_noise * noise;
            }
            for (int l = 0; l < m; ++l) {
              double noise = 0;
              for (int j = 0; j < r; ++j) noise += tv[static_cast<std::size_t>(l) * r + j] * xi[j];
              y[l] += sc.y_drift * bv[l] + sc.y_noise * noise;
              y[l] -= std::floor(y[l]);
            }
          }
          for (int l = 0; l < n; ++l) out[i * static_cast<std::size_t>(n) + l] = x[l];
        }
      });
}

}  // namespace

std::vector<double> simulate_terminal(const VolatilityModel& model, const SimConfig& cfg) {
  validate_config(model, cfg);
  const int n = model.n;
  std::vector<double> x0 = cfg.x0.empty() ? std::vector<double>(n, 0.0) : cfg.x0;
  std::vector<double> y0 = cfg.y0.empty() ? std::vector<double>(model.m, 0.0) : cfg.y0;
  std::vector<double> out(static_cast<std::size_t>(cfg.n_paths) * n);

  if (model.kernel.has_value() && n == 1 && model.m == 1)
    simulate_trig1d(*model.kernel, cfg, x0[0], y0[0], out.data());
  else
    simulate_generic(model, cfg, x0, y0, out.data());

  for (double v : out)
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "terminal sample is not finite");
  return out;
}

McEstimate estimate_v_eps(const VolatilityModel& model, const SimConfig& cfg,
                          const std::function<double(std::span<const double>)>& h) {
  std::vector<double> samples = simulate_terminal(model, cfg);
  const int n = model.n;
  const long np = cfg.n_paths;
  std::vector<double> hv(static_cast<std::size_t>(np));
  for (long i = 0; i < np; ++i)
    hv[i] = h(std::span<const double>(&samples[static_cast<std::size_t>(i) * n], n));

  double smax = -std::numeric_limits<double>::infinity();
  for (double v : hv) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "payoff is not finite");
    smax = std::max(smax, v);
  }
  std::vector<double> w(hv.size());
  for (std::size_t i = 0; i < hv.size(); ++i) w[i] = std::exp((hv[i] - smax) / cfg.epsilon);
  double mean = pairwise_sum(w.data(), w.size()) / static_cast<double>(np);
  std::vector<double> sq(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) sq[i] = (w[i] - mean) * (w[i] - mean);
  double sd = std::sqrt(pairwise_sum(sq.data(), sq.size()) / (static_cast<double>(np) - 1));

  McEstimate est;
  est.value = smax + cfg.epsilon * std::log(mean);
  est.std_error = cfg.epsilon * sd / (mean * std::sqrt(static_cast<double>(np)));
  est.n = np;
  est.seed = cfg.seed;
  est.notes = "log-transformed terminal functional";
  return est;
}

bool EventSet::contains(std::span<const double> x) const {
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(x[i] > lo[i] && x[i] < hi[i])) return false;
  return true;
}

EventSet EventSet::half_line_above(double threshold) {
  return {{threshold}, {std::numeric_limits<double>::infinity()}};
}

EventSet EventSet::half_line_below(double threshold) {
  return {{-std::numeric_limits<double>::infinity()}, {threshold}};
}

LdpReport ldp_slope(const VolatilityModel& model, double alpha, double t, const EventSet& B,
                    std::span<const double> eps_list, long n_paths, std::uint64_t seed,
                    int threads, std::optional<double> target_rate) {
  if (eps_list.size() < 3) fail(ErrorCode::DomainError, "need at least 3 epsilon values");
  for (std::size_t i = 1; i < eps_list.size(); ++i)
    if (!(eps_list[i] < eps_list[i - 1]))
      fail(ErrorCode::DomainError, "eps list must be strictly decreasing");
  if (static_cast<int>(B.lo.size()) != model.n || static_cast<int>(B.hi.size()) != model.n)
    fail(ErrorCode::DimensionMismatch, "event set dimension != n");

  LdpReport rep;
  for (std::size_t e = 0; e < eps_list.size(); ++e) {
    SimConfig cfg;
    cfg.epsilon = eps_list[e];
    cfg.alpha = alpha;
    cfg.t = t;
    cfg.dt = default_dt(cfg.epsilon, alpha, t);
    cfg.n_paths = n_paths;
    std::uint64_t st = seed ^ (0x9e3779b97f4a7c15ULL * (e + 1));
    cfg.seed = splitmix64(st);
    cfg.threads = threads;
    std::vector<double> samples = simulate_terminal(model, cfg);

    LdpRow row;
    row.eps = cfg.epsilon;
    row.n = n_paths;
    long hits = 0;
    for (long i = 0; i < n_paths; ++i)
      if (B.contains(std::span<const double>(&samples[static_cast<std::size_t>(i) * model.n],
                                             model.n)))
        ++hits;
    row.hits = hits;
    if (hits == 0) {
      row.dropped = true;
      rep.rows.push_back(row);
      continue;
    }
    double p = static_cast<double>(hits) / static_cast<double>(n_paths);
    row.p_hat = p;
    row.y = cfg.epsilon * std::log(p);
    // Wilson interval at z = 1 mapped through eps*log
    const double z = 1.0, nn = static_cast<double>(n_paths);
    double denom = 1 + z * z / nn;
    double centerw = (p + z * z / (2 * nn)) / denom;
    double half = (z * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn))) / denom;
    double plo = std::max(centerw - half, 1e-300), phi = std::min(centerw + half, 1.0);
    row.se_y = 0.5 * cfg.epsilon * (std::log(phi) - std::log(plo));
    rep.rows.push_back(row);
  }

  std::vector<const LdpRow*> used;
  for (const auto& r : rep.rows)
    if (!r.dropped) used.push_back(&r);
  if (used.size() < 3)
    fail(ErrorCode::ZeroHits, "fewer than 3 epsilon values have nonzero hit counts");

  // ordinary least squares y = intercept + slope * eps
  double mx = 0, my = 0;
  for (auto* r : used) {
    mx += r->eps;
    my += r->y;
  }
  mx /= static_cast<double>(used.size());
  my /= static_cast<double>(used.size());
  double sxx = 0, sxy = 0;
  for (auto* r : used) {
    sxx += (r->eps - mx) * (r->eps - mx);
    sxy += (r->eps - mx) * (r->y - my);
  }
  rep.slope = sxy / sxx;
  rep.intercept = my - rep.slope * mx;
  double var = 0;
  for (auto* r : used) {
    double ci = 1.0 / static_cast<double>(used.size()) - mx * (r->eps - mx) / sxx;
    var += ci * ci * r->se_y * r->se_y;
  }
  rep.intercept_se = std::sqrt(var);
  rep.points_used = static_cast<int>(used.size());
  rep.target = target_rate;
  if (target_rate && std::abs(*target_rate) > 0)
    rep.rel_gap = std::abs(rep.intercept - (-*target_rate)) / std::abs(*target_rate);
  return rep;
}

}  // namespace fastvol
