#include "tvar/baselines.hpp"

#include <chrono>
#include <cmath>
#include <optional>

namespace tvar {

namespace {

struct SpdSolver {
  Eigen::LLT<Matrix> llt;
  explicit SpdSolver(const Matrix& C) : llt(C) {
    if (llt.info() != Eigen::Success)
      throw SpecError("VarConfig covariance is not SPD");
  }
  Vector apply_inverse(const Vector& v) const { return llt.solve(v); }
};

Vector observe_noiseless(const Vector& state, const ObservationSpec& spec,
                         bool linear) {
  Vector o(spec.n_obs());
  for (int i = 0; i < spec.n_obs(); ++i)
    o[i] = linear ? state[spec.mask[i]]
                  : spec.arctan_scale *
                        std::atan(spec.arctan_slope * state[spec.mask[i]]);
  return o;
}

/// J_G^T v scattered back to state space; dG_i/ds = a*b / (1 + (b*s)^2).
Vector obs_jacobian_tv(const Vector& state, const ObservationSpec& spec,
                       const Vector& v, bool linear) {
  Vector out = Vector::Zero(state.size());
  for (int i = 0; i < spec.n_obs(); ++i) {
    if (linear) {
      out[spec.mask[i]] = v[i];
      continue;
    }
    const double bs = spec.arctan_slope * state[spec.mask[i]];
    out[spec.mask[i]] =
        v[i] * spec.arctan_scale * spec.arctan_slope / (1.0 + bs * bs);
  }
  return out;
}

constexpr double kSentinelCost = 1e30;

// Strong Wolfe line search (c1=1e-4, c2=0.9) with zoom.
double wolfe_line_search(const CostGrad& f, const Vector& x, const Vector& p,
                         double f0, const Vector& g0, Vector& x_out,
                         double& f_out, Vector& g_out, bool& failed) {
  const double c1 = 1e-4, c2 = 0.9;
  const double d0 = g0.dot(p);
  failed = false;
  if (d0 >= 0) {
    failed = true;
    return 0.0;
  }

  auto eval = [&](double a, double& fa, Vector& ga) {
    x_out = x + a * p;
    fa = f(x_out, ga);
    return ga.dot(p);
  };

  double a_prev = 0.0, f_prev = f0, d_prev = d0;
  double a = 1.0;
  double f_a;
  Vector g_a(x.size());

  auto zoom = [&](double lo, double hi, double f_lo) -> double {
    for (int j = 0; j < 30; ++j) {
      const double aj = 0.5 * (lo + hi);
      const double dj = eval(aj, f_a, g_a);
      if (f_a > f0 + c1 * aj * d0 || f_a >= f_lo) {
        hi = aj;
      } else {
        if (std::abs(dj) <= -c2 * d0) return aj;
        if (dj * (hi - lo) >= 0) hi = lo;
        lo = aj;
        f_lo = f_a;
      }
    }
    failed = true;
    return 0.5 * (lo + hi);
  };

  for (int i = 0; i < 30; ++i) {
    const double d_a = eval(a, f_a, g_a);
    if (f_a > f0 + c1 * a * d0 || (i > 0 && f_a >= f_prev)) {
      const double res = zoom(a_prev, a, f_prev);
      f_out = f_a;
      g_out = g_a;
      // zoom left x_out/f_a/g_a at its last accepted point
      eval(res, f_out, g_out);
      x_out = x + res * p;
      return res;
    }
    if (std::abs(d_a) <= -c2 * d0) {
      f_out = f_a;
      g_out = g_a;
      return a;
    }
    if (d_a >= 0) {
      const double res = zoom(a, a_prev, f_a);
      eval(res, f_out, g_out);
      x_out = x + res * p;
      return res;
    }
    a_prev = a;
    f_prev = f_a;
    d_prev = d_a;
    a *= 2.0;
  }
  failed = true;
  return a;
}

}  // namespace

Vector lbfgs(const CostGrad& f, const Vector& x0, int memory, double tol,
             int max_iter, OptimizerTrace* trace) {
  const auto t_start = std::chrono::steady_clock::now();
  Vector x = x0;
  Vector g(x.size());
  double fx = f(x, g);
  if (!std::isfinite(fx)) throw NumericError("lbfgs: non-finite cost at x0");

  OptimizerTrace local;
  OptimizerTrace& tr = trace ? *trace : local;
  tr.objective.push_back(fx);

  std::vector<Vector> s_hist, y_hist;
  std::vector<double> rho_hist;

  for (int it = 0; it < max_iter; ++it) {
    if (g.norm() <= tol) {
      tr.converged = true;
      break;
    }

    // Two-loop recursion.
    Vector q = g;
    const int h = static_cast<int>(s_hist.size());
    std::vector<double> alpha(h);
    for (int i = h - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (h > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < h; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector p = -q;

    Vector x_new(x.size()), g_new(x.size());
    double f_new = fx;
    bool failed = false;
    const double step =
        wolfe_line_search(f, x, p, fx, g, x_new, f_new, g_new, failed);
    if (failed || !(f_new < fx)) {
      tr.line_search_failed = true;
      break;  // best iterate so far
    }

    Vector s_vec = x_new - x;
    Vector y_vec = g_new - g;
    const double sy = s_vec.dot(y_vec);
    if (sy > 1e-12 * s_vec.norm() * y_vec.norm()) {
      s_hist.push_back(std::move(s_vec));
      y_hist.push_back(std::move(y_vec));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }

    x = x_new;
    fx = f_new;
    g = g_new;
    tr.objective.push_back(fx);
    tr.iterations = it + 1;
    (void)step;
  }

  tr.final_gradient_norm = g.norm();
  tr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             t_start)
                   .count();
  return x;
}

Vector threedvar(const Vector& observation, const Vector& s_b,
                 const VarConfig& cfg, const ObservationSpec& obs_spec,
                 OptimizerTrace* trace) {
  SpdSolver B(cfg.B), R(cfg.R);
  CostGrad f = [&](const Vector& s, Vector& grad) {
    Vector db = s - s_b;
    Vector Binv_db = B.apply_inverse(db);
    Vector res = observation - observe_noiseless(s, obs_spec, cfg.linear_observation);
    Vector Rinv_res = R.apply_inverse(res);
    grad = 2.0 * Binv_db - 2.0 * obs_jacobian_tv(s, obs_spec, Rinv_res, cfg.linear_observation);
    return db.dot(Binv_db) + res.dot(Rinv_res);
  };
  return lbfgs(f, s_b, cfg.lbfgs_memory, cfg.gradient_tol, cfg.max_iterations,
               trace);
}

namespace {

/// Forward trajectory over the window plus per-sample sub-step states for
/// the adjoint sweep. Throws on divergence.
struct ForwardSweep {
  Matrix samples;                         // (T+1) x n_s
  std::vector<std::vector<Vector>> subs;  // per sample step: sub-step inputs
};

ForwardSweep roll_forward(const Vector& s0, int T, const SystemSpec& spec,
                          bool keep_subs, const KsIntegrator* ks = nullptr) {
  const int sub = spec.steps_per_sample();
  std::optional<KsIntegrator> local_ks;
  if (spec.kind == SystemKind::KS && ks == nullptr) {
    local_ks.emplace(spec);
    ks = &*local_ks;
  }
  ForwardSweep fw;
  fw.samples.resize(T + 1, s0.size());
  fw.samples.row(0) = s0;
  Vector s = s0;
  for (int t = 1; t <= T; ++t) {
    std::vector<Vector> inputs;
    if (spec.kind == SystemKind::Lorenz96) {
      for (int j = 0; j < sub; ++j) {
        if (keep_subs) inputs.push_back(s);
        s = detail::lorenz96_rk4_step(s, spec.dt_integrate, spec.forcing);
        if (!s.allFinite() || s.cwiseAbs().maxCoeff() > 1e6)
          throw NumericError("forward sweep diverged");
      }
    } else {
      s = ks->advance(s, sub);
      if (!s.allFinite() || s.cwiseAbs().maxCoeff() > 1e6)
        throw NumericError("forward sweep diverged");
    }
    if (keep_subs) fw.subs.push_back(std::move(inputs));
    fw.samples.row(t) = s;
  }
  return fw;
}

}  // namespace

double fourdvar_cost_grad(const Vector& s0, const ObservationWindow& window,
                          const Vector& s_b, const VarConfig& cfg,
                          const SystemSpec& spec,
                          const ObservationSpec& obs_spec, Vector& grad) {
  const int T = static_cast<int>(window.observations.rows()) - 1;
  SpdSolver B(cfg.B), R(cfg.R);

  const bool adjoint = cfg.gradient_mode == GradientMode::Adjoint &&
                       spec.kind == SystemKind::Lorenz96;
  std::optional<KsIntegrator> ks;
  if (spec.kind == SystemKind::KS) ks.emplace(spec);
  const KsIntegrator* ks_ptr = ks ? &*ks : nullptr;

  auto cost_only = [&](const Vector& s) -> double {
    ForwardSweep fw = roll_forward(s, T, spec, false, ks_ptr);
    Vector db = s - s_b;
    double c = db.dot(B.apply_inverse(db));
    for (int t = 0; t <= T; ++t) {
      Vector res = window.observations.row(t).transpose() -
                   observe_noiseless(fw.samples.row(t), obs_spec, cfg.linear_observation);
      c += res.dot(R.apply_inverse(res));
    }
    return c;
  };

  double cost;
  try {
    if (adjoint) {
      ForwardSweep fw = roll_forward(s0, T, spec, true);
      Vector db = s0 - s_b;
      Vector Binv_db = B.apply_inverse(db);
      cost = db.dot(Binv_db);

      std::vector<Vector> obs_grads(T + 1);
      for (int t = 0; t <= T; ++t) {
        Vector res = window.observations.row(t).transpose() -
                     observe_noiseless(fw.samples.row(t), obs_spec, cfg.linear_observation);
        Vector Rinv_res = R.apply_inverse(res);
        cost += res.dot(Rinv_res);
        obs_grads[t] =
            -2.0 * obs_jacobian_tv(fw.samples.row(t), obs_spec, Rinv_res, cfg.linear_observation);
      }

      Vector adj = obs_grads[T];
      for (int t = T; t >= 1; --t) {
        const auto& inputs = fw.subs[t - 1];
        for (int j = static_cast<int>(inputs.size()) - 1; j >= 0; --j)
          adj = detail::lorenz96_rk4_step_vjp(inputs[j], adj,
                                              spec.dt_integrate, spec.forcing);
        adj += obs_grads[t - 1];
      }
      grad = adj + 2.0 * Binv_db;
    } else {
      cost = cost_only(s0);
      grad.resize(s0.size());
      const double h = 1e-6;
      for (int i = 0; i < s0.size(); ++i) {
        Vector sp = s0, sm = s0;
        sp[i] += h;
        sm[i] -= h;
        grad[i] = (cost_only(sp) - cost_only(sm)) / (2.0 * h);
      }
    }
  } catch (const NumericError&) {
    // Divergence inside the window: keep the line search sane.
    grad = Vector::Zero(s0.size());
    return kSentinelCost;
  }
  return cost;
}

FourDVarResult fourdvar(const ObservationWindow& window, const Vector& s_b,
                        const VarConfig& cfg, const SystemSpec& spec,
                        const ObservationSpec& obs_spec) {
  const int T = static_cast<int>(window.observations.rows()) - 1;
  CostGrad f = [&](const Vector& s0, Vector& grad) {
    return fourdvar_cost_grad(s0, window, s_b, cfg, spec, obs_spec, grad);
  };
  // The strong-constraint cost is nonconvex in s0; a handful of starts with
  // the lowest final cost kept makes the baseline robust to bad basins.
  std::vector<Vector> starts{s_b};
  if (cfg.multistart > 1)
    starts.push_back(threedvar(window.observations.row(0), s_b, cfg, obs_spec));
  if (cfg.multistart > 2) {
    Rng rng = derived_rng(cfg.multistart_seed, 41);
    Eigen::LLT<Matrix> llt(cfg.B);
    for (int k = 2; k < cfg.multistart; ++k)
      starts.push_back(s_b + llt.matrixL() *
                                 standard_normal(static_cast<int>(s_b.size()),
                                                 rng));
  }

  FourDVarResult result;
  Vector best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const Vector& x0 : starts) {
    OptimizerTrace trace;
    Vector s0 = lbfgs(f, x0, cfg.lbfgs_memory, cfg.gradient_tol,
                      cfg.max_iterations, &trace);
    Vector g(s0.size());
    const double cost = fourdvar_cost_grad(s0, window, s_b, cfg, spec,
                                           obs_spec, g);
    if (cost < best_cost) {
      best_cost = cost;
      best = s0;
      result.trace = trace;
    }
  }
  result.analysis = roll_forward(best, T, spec, false).samples;
  return result;
}

}  // namespace tvar
