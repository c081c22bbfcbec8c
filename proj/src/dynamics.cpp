#include "tvar/dynamics.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace tvar {

namespace {
constexpr double kDivergenceThreshold = 1e6;
}

void SystemSpec::validate() const {
  if (dt_integrate <= 0 || dt_sample <= 0)
    throw SpecError("step sizes must be positive");
  const double ratio = dt_sample / dt_integrate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9)
    throw SpecError("dt_sample must be a multiple of dt_integrate");
  if (kind == SystemKind::Lorenz96) {
    if (state_dim < 4)
      throw SpecError("Lorenz-96 needs state_dim >= 4 for distinct wraparound indices");
  } else {
    if (state_dim < 4 || (state_dim & (state_dim - 1)) != 0)
      throw SpecError("KS needs a power-of-two state_dim");
    if (domain_length <= 0) throw SpecError("KS needs a positive domain_length");
  }
}

int SystemSpec::steps_per_sample() const {
  return static_cast<int>(std::round(dt_sample / dt_integrate));
}

SystemSpec SystemSpec::lorenz96(int n, double F, std::uint64_t seed) {
  SystemSpec s;
  s.kind = SystemKind::Lorenz96;
  s.state_dim = n;
  s.forcing = F;
  s.dt_integrate = 0.01;
  s.dt_sample = 0.1;
  s.rng_seed = seed;
  return s;
}

SystemSpec SystemSpec::ks(int n, std::uint64_t seed) {
  SystemSpec s;
  s.kind = SystemKind::KS;
  s.state_dim = n;
  s.domain_length = 32.0 * std::numbers::pi;
  s.dt_integrate = 0.001;
  s.dt_sample = 0.01;
  s.rng_seed = seed;
  return s;
}

Vector lorenz96_rhs(const Vector& state, double forcing) {
  const int n = static_cast<int>(state.size());
  if (n < 4) throw SpecError("lorenz96_rhs: state_dim >= 4 required");
  Vector d(n);
  for (int k = 0; k < n; ++k) {
    const int km1 = (k - 1 + n) % n;
    const int km2 = (k - 2 + n) % n;
    const int kp1 = (k + 1) % n;
    d[k] = -state[km1] * (state[km2] - state[kp1]) - state[k] + forcing;
  }
  return d;
}

namespace detail {

Vector lorenz96_rk4_step(const Vector& s, double dt, double forcing) {
  const Vector k1 = lorenz96_rhs(s, forcing);
  const Vector k2 = lorenz96_rhs(s + 0.5 * dt * k1, forcing);
  const Vector k3 = lorenz96_rhs(s + 0.5 * dt * k2, forcing);
  const Vector k4 = lorenz96_rhs(s + dt * k3, forcing);
  return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace {
// (J(x)^T v)_j = sum_k v_k df_k/ds_j for the Lorenz-96 right-hand side.
Vector lorenz96_jacobian_tv(const Vector& x, const Vector& v) {
  const int n = static_cast<int>(x.size());
  Vector out = Vector::Zero(n);
  for (int k = 0; k < n; ++k) {
    const int km1 = (k - 1 + n) % n;
    const int km2 = (k - 2 + n) % n;
    const int kp1 = (k + 1) % n;
    out[km1] += v[k] * (-(x[km2] - x[kp1]));
    out[km2] += v[k] * (-x[km1]);
    out[kp1] += v[k] * x[km1];
    out[k] += v[k] * (-1.0);
  }
  return out;
}
}  // namespace

Vector lorenz96_rk4_step_vjp(const Vector& s, const Vector& adjoint,
                             double dt, double forcing) {
  // Recompute the stage inputs.
  const Vector k1 = lorenz96_rhs(s, forcing);
  const Vector x2 = s + 0.5 * dt * k1;
  const Vector k2 = lorenz96_rhs(x2, forcing);
  const Vector x3 = s + 0.5 * dt * k2;
  const Vector k3 = lorenz96_rhs(x3, forcing);
  const Vector x4 = s + dt * k3;

  // s' = s + dt/6 (k1 + 2 k2 + 2 k3 + k4) with k_i chained through the
  // stage inputs; reverse accumulation of lambda^T ds'/ds.
  const double w = dt / 6.0;
  const Vector v4 = lorenz96_jacobian_tv(x4, w * adjoint);
  const Vector v3 = lorenz96_jacobian_tv(x3, 2.0 * w * adjoint + dt * v4);
  const Vector v2 = lorenz96_jacobian_tv(x2, 2.0 * w * adjoint + 0.5 * dt * v3);
  const Vector v1 = lorenz96_jacobian_tv(s, w * adjoint + 0.5 * dt * v2);
  return adjoint + v1 + v2 + v3 + v4;
}

}  // namespace detail

Trajectory integrate_lorenz96(const SystemSpec& spec, const Vector& initial,
                              int n_samples) {
  spec.validate();
  if (spec.kind != SystemKind::Lorenz96)
    throw SpecError("integrate_lorenz96: spec.kind must be lorenz96");
  if (n_samples < 1) throw SpecError("n_samples >= 1 required");
  if (initial.size() != spec.state_dim)
    throw SpecError("initial state dimension mismatch");

  const int sub = spec.steps_per_sample();
  Trajectory traj;
  traj.states.resize(n_samples, spec.state_dim);
  traj.dt_sample = spec.dt_sample;
  traj.spec = spec;

  Vector s = initial;
  traj.states.row(0) = s;
  for (int t = 1; t < n_samples; ++t) {
    for (int j = 0; j < sub; ++j)
      s = detail::lorenz96_rk4_step(s, spec.dt_integrate, spec.forcing);
    if (!s.allFinite() || s.cwiseAbs().maxCoeff() > kDivergenceThreshold)
      throw NumericError("Lorenz-96 integration diverged at sample step " +
                         std::to_string(t));
    traj.states.row(t) = s;
  }
  return traj;
}

struct KsIntegrator::Impl {
  SystemSpec spec;
  double nonlinear_weight = 1.0;
  Eigen::VectorXd k;                       // wavenumbers, FFT layout
  Eigen::VectorXd E, E2, Q, f1, f2, f3;    // ETDRK4 coefficients
  Eigen::VectorXd mask;                    // 2/3-rule dealiasing

  using Cplx = std::complex<double>;
  using CVec = Eigen::VectorXcd;

  CVec to_spectral(const Vector& u) const {
    Eigen::FFT<double> fft;
    const int n = spec.state_dim;
    std::vector<double> in(u.data(), u.data() + n);
    std::vector<Cplx> out(n);
    fft.fwd(out, in);
    return Eigen::Map<CVec>(out.data(), n);
  }
  Vector to_real(const CVec& uh) const {
    Eigen::FFT<double> fft;
    const int n = spec.state_dim;
    std::vector<Cplx> in(uh.data(), uh.data() + n);
    std::vector<double> out(n);
    fft.inv(out, in);
    return Eigen::Map<Vector>(out.data(), n);
  }
  CVec nonlin(const CVec& uh) const {
    const int n = spec.state_dim;
    if (nonlinear_weight == 0.0) return CVec::Zero(n);
    const Cplx iu(0.0, 1.0);
    CVec masked = uh.cwiseProduct(mask.cast<Cplx>());
    Vector u = to_real(masked);
    CVec u2h = to_spectral(u.cwiseProduct(u));
    CVec out(n);
    for (int i = 0; i < n; ++i) out[i] = -0.5 * iu * k[i] * u2h[i];
    return nonlinear_weight * out.cwiseProduct(mask.cast<Cplx>());
  }
  CVec step(const CVec& v) const {
    const CVec Nv = nonlin(v);
    const CVec a = E2.cast<Cplx>().cwiseProduct(v) + Q.cast<Cplx>().cwiseProduct(Nv);
    const CVec Na = nonlin(a);
    const CVec b = E2.cast<Cplx>().cwiseProduct(v) + Q.cast<Cplx>().cwiseProduct(Na);
    const CVec Nb = nonlin(b);
    const CVec c = E2.cast<Cplx>().cwiseProduct(a) +
                   Q.cast<Cplx>().cwiseProduct(2.0 * Nb - Nv);
    const CVec Nc = nonlin(c);
    return E.cast<Cplx>().cwiseProduct(v) + f1.cast<Cplx>().cwiseProduct(Nv) +
           f2.cast<Cplx>().cwiseProduct(Nb + Na) + f3.cast<Cplx>().cwiseProduct(Nc);
  }
};

KsIntegrator::KsIntegrator(const SystemSpec& spec, double nonlinear_weight) {
  spec.validate();
  if (spec.kind != SystemKind::KS)
    throw SpecError("KsIntegrator: spec.kind must be ks");
  auto impl = std::make_shared<Impl>();
  impl->spec = spec;
  impl->nonlinear_weight = nonlinear_weight;

  using Cplx = std::complex<double>;
  const int n = spec.state_dim;
  const double h = spec.dt_integrate;
  const double L = spec.domain_length;

  impl->k.resize(n);
  for (int i = 0; i < n; ++i) {
    const int m = (i <= n / 2) ? i : i - n;
    impl->k[i] = 2.0 * std::numbers::pi * m / L;
  }
  Eigen::VectorXd lin(n);
  for (int i = 0; i < n; ++i)
    lin[i] = impl->k[i] * impl->k[i] - std::pow(impl->k[i], 4);

  // Kassam-Trefethen contour evaluation of the phi coefficients.
  const int M = 32;
  impl->E.resize(n);
  impl->E2.resize(n);
  impl->Q.resize(n);
  impl->f1.resize(n);
  impl->f2.resize(n);
  impl->f3.resize(n);
  for (int i = 0; i < n; ++i) {
    const double hl = h * lin[i];
    impl->E[i] = std::exp(hl);
    impl->E2[i] = std::exp(hl / 2.0);
    Cplx q(0, 0), a(0, 0), b(0, 0), c(0, 0);
    for (int j = 0; j < M; ++j) {
      const double theta = std::numbers::pi * (j + 0.5) / M;
      const Cplx z = hl + Cplx(std::cos(theta), std::sin(theta));
      q += h * (std::exp(z / 2.0) - 1.0) / z;
      a += h * (-4.0 - z + std::exp(z) * (4.0 - 3.0 * z + z * z)) / std::pow(z, 3);
      b += h * (2.0 + z + std::exp(z) * (-2.0 + z)) / std::pow(z, 3);
      c += h * (-4.0 - 3.0 * z - z * z + std::exp(z) * (4.0 - z)) / std::pow(z, 3);
    }
    impl->Q[i] = q.real() / M;
    impl->f1[i] = a.real() / M;
    impl->f2[i] = 2.0 * b.real() / M;
    impl->f3[i] = c.real() / M;
  }

  impl->mask = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    const int m = (i <= n / 2) ? i : n - i;
    if (m > n / 3) impl->mask[i] = 0.0;
  }
  impl_ = std::move(impl);
}

Vector KsIntegrator::advance(const Vector& u, int n_steps) const {
  if (u.size() != impl_->spec.state_dim)
    throw SpecError("KsIntegrator: state dimension mismatch");
  Impl::CVec v = impl_->to_spectral(u);
  for (int j = 0; j < n_steps; ++j) {
    v = impl_->step(v);
    if (!v.allFinite()) throw NumericError("KS integration diverged");
  }
  return impl_->to_real(v);
}

namespace detail {

Trajectory integrate_ks_weighted(const SystemSpec& spec, const Vector& initial,
                                 int n_samples, double nonlinear_weight) {
  spec.validate();
  if (spec.kind != SystemKind::KS)
    throw SpecError("integrate_ks: spec.kind must be ks");
  if (n_samples < 1) throw SpecError("n_samples >= 1 required");
  const int n = spec.state_dim;
  if (initial.size() != n) throw SpecError("initial state dimension mismatch");

  KsIntegrator integ(spec, nonlinear_weight);
  const int sub = spec.steps_per_sample();

  Trajectory traj;
  traj.states.resize(n_samples, n);
  traj.dt_sample = spec.dt_sample;
  traj.spec = spec;

  Vector u = initial;
  traj.states.row(0) = u;
  for (int t = 1; t < n_samples; ++t) {
    try {
      u = integ.advance(u, sub);
    } catch (const NumericError&) {
      throw NumericError("KS integration diverged at sample step " +
                         std::to_string(t));
    }
    if (!u.allFinite() || u.cwiseAbs().maxCoeff() > kDivergenceThreshold)
      throw NumericError("KS integration diverged at sample step " +
                         std::to_string(t));
    traj.states.row(t) = u;
  }
  return traj;
}

}  // namespace detail

Trajectory integrate_ks(const SystemSpec& spec, const Vector& initial,
                        int n_samples) {
  return detail::integrate_ks_weighted(spec, initial, n_samples, 1.0);
}

Trajectory integrate(const SystemSpec& spec, const Vector& initial,
                     int n_samples) {
  return spec.kind == SystemKind::Lorenz96
             ? integrate_lorenz96(spec, initial, n_samples)
             : integrate_ks(spec, initial, n_samples);
}

Vector spinup_initial(const SystemSpec& spec, int burn_in, Rng& rng) {
  spec.validate();
  if (burn_in < 0) throw SpecError("burn_in >= 0 required");
  const int max_retries = 5;
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Vector draw;
    if (spec.kind == SystemKind::Lorenz96) {
      draw = standard_normal(spec.state_dim, rng);
    } else {
      // Band-limited random field: modes |k| <= 8 with unit-variance
      // coefficients, keeping the spin-up short.
      const int n = spec.state_dim;
      draw = Vector::Zero(n);
      std::normal_distribution<double> dist(0.0, 1.0);
      for (int m = 1; m <= 8; ++m) {
        const double a = dist(rng), b = dist(rng);
        for (int i = 0; i < n; ++i) {
          const double x = 2.0 * std::numbers::pi * m * i / n;
          draw[i] += a * std::cos(x) + b * std::sin(x);
        }
      }
    }
    if (burn_in == 0) return draw;
    try {
      Trajectory t = integrate(spec, draw, burn_in + 1);
      return t.states.row(burn_in);
    } catch (const NumericError&) {
      // divergent draw, retry
    }
  }
  throw NumericError("spinup_initial: repeated divergence during burn-in");
}

}  // namespace tvar
