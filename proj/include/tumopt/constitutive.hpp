#pragma once

// Model functions of the tumour system: double-well potential, response
// functions f, h, k, stress response g, elastic energy derivatives, source
// terms U and S, the drug schedule and the stress-cost weight n.

#include "tumopt/grid_fem.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace tumopt {

using Tensor2 = Eigen::Matrix2d;
/// Fourth-order tensor with index pair (ij) flattened as 2*i + j.
using Tensor4 = Eigen::Matrix4d;

/// Engineering form [a_xx, a_yy, a_xy + a_yx] of a strain-like tensor.
inline Eigen::Vector3d to_engineering(const Tensor2& a) { return {a(0, 0), a(1, 1), a(0, 1) + a(1, 0)}; }
/// Voigt form [s_xx, s_yy, s_xy] of a symmetric stress-like tensor.
inline Eigen::Vector3d to_voigt(const Tensor2& s) { return {s(0, 0), s(1, 1), 0.5 * (s(0, 1) + s(1, 0))}; }
inline Tensor2 from_voigt(const Eigen::Vector3d& s) {
  Tensor2 t;
  t << s[0], s[2], s[2], s[1];
  return t;
}
/// Squared Frobenius norm of a symmetric tensor given in Voigt form.
inline double frobenius_sq(const Eigen::Vector3d& s) { return s[0] * s[0] + s[1] * s[1] + 2.0 * s[2] * s[2]; }
/// Voigt stress to engineering form, so that a:b = engineering(a) . voigt(b).
inline Eigen::Vector3d voigt_to_engineering(const Eigen::Vector3d& s) { return {s[0], s[1], 2.0 * s[2]}; }

// ---------------------------------------------------------------------------
// Quartic double well Psi(r) = (r^2 - 1)^2 / 4 = Psi1 + Psi2 with
// Psi1 = (r^4 + 1) / 4 convex and Psi2 = -r^2 / 2 concave.

namespace psi {
inline double value(double r) { return 0.25 * (r * r - 1.0) * (r * r - 1.0); }
inline double prime(double r) { return r * r * r - r; }
inline double second(double r) { return 3.0 * r * r - 1.0; }
inline double third(double r) { return 6.0 * r; }

inline double convex_value(double r) { return 0.25 * (r * r * r * r + 1.0); }
inline double convex_prime(double r) { return r * r * r; }
inline double convex_second(double r) { return 3.0 * r * r; }
inline double concave_value(double r) { return -0.5 * r * r; }
inline double concave_prime(double r) { return -r; }
inline double concave_second(double) { return -1.0; }
}  // namespace psi

// ---------------------------------------------------------------------------
// Smooth step S(x) = x^3 (10 - 15 x + 6 x^2) on [0, 1], constant outside; C^2.

namespace detail {
inline double smoothstep(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return std::clamp(x * x * x * (10.0 + x * (-15.0 + 6.0 * x)), 0.0, 1.0);
}
inline double smoothstep_d1(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return 30.0 * x * x * (1.0 - x) * (1.0 - x);
}
inline double smoothstep_d2(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
}
}  // namespace detail

/// Bounded response function of phi used for f, h and k.
struct Response {
  enum class Kind { smooth_step, constant };
  Kind kind = Kind::smooth_step;
  double constant = 1.0;

  double operator()(double r) const {
    return kind == Kind::constant ? constant : detail::smoothstep(0.5 * (r + 1.0));
  }
  double prime(double r) const {
    return kind == Kind::constant ? 0.0 : 0.5 * detail::smoothstep_d1(0.5 * (r + 1.0));
  }
  double second(double r) const {
    return kind == Kind::constant ? 0.0 : 0.25 * detail::smoothstep_d2(0.5 * (r + 1.0));
  }
};

/// Stress response g(A) = 1 / sqrt(1 + |A|^2), or the constant 1.
struct StressResponse {
  enum class Kind { inverse_sqrt, constant };
  Kind kind = Kind::inverse_sqrt;

  /// g as a function of |A|^2.
  double of_norm_sq(double a2) const { return kind == Kind::constant ? 1.0 : 1.0 / std::sqrt(1.0 + a2); }
  /// Scalar factor c with g'(A) = c * A.
  double grad_factor(double a2) const {
    return kind == Kind::constant ? 0.0 : -1.0 / std::pow(1.0 + a2, 1.5);
  }
};

inline double g_stress(const Tensor2& a, StressResponse g = {}) { return g.of_norm_sq(a.squaredNorm()); }

inline Tensor2 g_stress_grad(const Tensor2& a, StressResponse g = {}) {
  return g.grad_factor(a.squaredNorm()) * a;
}

inline Tensor4 g_stress_hess(const Tensor2& a, StressResponse g = {}) {
  Tensor4 h = Tensor4::Zero();
  if (g.kind == StressResponse::Kind::constant) return h;
  const double s = 1.0 + a.squaredNorm();
  const double c3 = 3.0 / std::pow(s, 2.5);
  const double c1 = 1.0 / std::pow(s, 1.5);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l)
          h(2 * i + j, 2 * k + l) = c3 * a(i, j) * a(k, l) - ((i == k && j == l) ? c1 : 0.0);
  return h;
}

// ---------------------------------------------------------------------------

/// Cost weight n(x, phi) localising the stress penalty.
struct WeightFunction {
  enum class Kind { ramp, indicator, constant };
  Kind kind = Kind::ramp;
  /// Subregion D = [x0, x1] x [y0, y1] for the indicator variant.
  std::array<double, 4> region{0.0, 0.0, 0.0, 0.0};

  bool inside(double x, double y) const {
    return x >= region[0] && x <= region[2] && y >= region[1] && y <= region[3];
  }
  double operator()(double x, double y, double phi) const {
    switch (kind) {
      case Kind::ramp: return detail::smoothstep(0.5 * (1.0 - phi));
      case Kind::indicator: return inside(x, y) ? 1.0 : 0.0;
      case Kind::constant: return 1.0;
    }
    return 0.0;
  }
  double prime(double, double, double phi) const {
    return kind == Kind::ramp ? -0.5 * detail::smoothstep_d1(0.5 * (1.0 - phi)) : 0.0;
  }
};

inline double weight_n(const WeightFunction& n, double x, double y, double phi) { return n(x, y, phi); }
inline double weight_n_prime(const WeightFunction& n, double x, double y, double phi) {
  return n.prime(x, y, phi);
}

// ---------------------------------------------------------------------------

struct ModelParams {
  double beta = 1.0;
  double nutrient_supply = 0.5;  // B
  double kappa = 1.0;
  double chi = 0.1;
  double lambda_p = 0.5;
  double lambda_a = 0.1;
  double lambda_c = 1.0;
  double sigma_c = 1.0;
  Tensor2 e_bar = Tensor2::Zero();
  Tensor2 e_star = 0.05 * Tensor2::Identity();
  ElasticityTensor elasticity = ElasticityTensor::isotropic(1.0, 1.0);
  Eigen::Vector2d traction = Eigen::Vector2d::Zero();

  Response f;
  Response h;
  Response k;
  StressResponse g;

  void validate() const {
    const double values[] = {beta, nutrient_supply, kappa, chi, lambda_p, lambda_a, lambda_c, sigma_c};
    for (double v : values)
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError("model constants must be finite and non-negative (assumption A1)");
    if (beta == 0.0 && nutrient_supply == 0.0 && kappa == 0.0)
      throw ConfigError("beta = 0 requires B > 0 or kappa > 0 (assumption A1)");
    if ((e_bar - e_bar.transpose()).norm() > 0.0 || (e_star - e_star.transpose()).norm() > 0.0)
      throw ConfigError("stress-free strains must be symmetric (assumption A1)");
    elasticity.validate();
    if (h.kind == Response::Kind::constant && h.constant < 0.0)
      throw ConfigError("h must be non-negative (assumption A3)");
  }

  Eigen::Vector3d e_bar_eng() const { return to_engineering(e_bar); }
  Eigen::Vector3d e_star_eng() const { return to_engineering(e_star); }
  /// C E* : E*
  double misfit_stiffness() const { return e_star_eng().dot(elasticity.voigt * e_star_eng()); }
};

/// Nutrient cap M = max(sigma_c, ||sigma_B||_inf).
inline double nutrient_cap(const ModelParams& p, double boundary_supply_max) {
  return std::max(p.sigma_c, boundary_supply_max);
}

/// Stress C(E - Ebar - phi E*) in Voigt form from an engineering strain.
inline Eigen::Vector3d stress_voigt(const ModelParams& p, double phi, const Eigen::Vector3d& strain_eng) {
  return p.elasticity.voigt * (strain_eng - p.e_bar_eng() - phi * p.e_star_eng());
}

/// W_{,E}(phi, E) = C(E - Ebar - phi E*) for a symmetric strain tensor.
inline Tensor2 stress(const ModelParams& p, double phi, const Tensor2& strain) {
  return from_voigt(stress_voigt(p, phi, to_engineering(strain)));
}

inline double elastic_energy(const ModelParams& p, double phi, const Tensor2& strain) {
  const Eigen::Vector3d e = to_engineering(strain) - p.e_bar_eng() - phi * p.e_star_eng();
  return 0.5 * e.dot(p.elasticity.voigt * e);
}

/// W_{,phi}(phi, E) = -C(E - Ebar - phi E*) : E*
inline double w_phi(const ModelParams& p, double phi, const Tensor2& strain) {
  return -stress_voigt(p, phi, to_engineering(strain)).dot(p.e_star_eng());
}

/// U = lambda_p sigma f(phi) g(W_E) - (lambda_a + m) k(phi)
inline double source_U(const ModelParams& p, double phi, double sigma, const Tensor2& strain, double m) {
  const double a2 = frobenius_sq(stress_voigt(p, phi, to_engineering(strain)));
  return p.lambda_p * sigma * p.f(phi) * p.g.of_norm_sq(a2) - (p.lambda_a + m) * p.k(phi);
}

/// Partial derivatives of U at a quadrature point.
struct SourceUPartials {
  double value;
  double d_phi;
  double d_sigma;
  double d_m;
  /// dU/dE contracted with an engineering strain: dU = d_strain . dE_eng
  Eigen::Vector3d d_strain;
};

inline SourceUPartials source_U_partials(const ModelParams& p, double phi, double sigma,
                                         const Eigen::Vector3d& strain_eng, double m) {
  const Eigen::Vector3d s = stress_voigt(p, phi, strain_eng);
  const double a2 = frobenius_sq(s);
  const double gv = p.g.of_norm_sq(a2);
  const double gf = p.g.grad_factor(a2);
  const double fv = p.f(phi);
  const double kv = p.k(phi);
  // g'(T) : C dE = gf * T : C dE = gf * (C T_eng) . dE_eng
  const Eigen::Vector3d c_t = p.elasticity.voigt * voigt_to_engineering(s);
  const double g_dphi = -gf * c_t.dot(p.e_star_eng());
  SourceUPartials out;
  out.value = p.lambda_p * sigma * fv * gv - (p.lambda_a + m) * kv;
  out.d_phi = p.lambda_p * sigma * (p.f.prime(phi) * gv + fv * g_dphi) - (p.lambda_a + m) * p.k.prime(phi);
  out.d_sigma = p.lambda_p * fv * gv;
  out.d_m = -kv;
  out.d_strain = p.lambda_p * sigma * fv * gf * c_t;
  return out;
}

/// S = -h(phi)(lambda_c sigma - s) + B(sigma_c - sigma)
inline double source_S(const ModelParams& p, double phi, double sigma, double s) {
  return -p.h(phi) * (p.lambda_c * sigma - s) + p.nutrient_supply * (p.sigma_c - sigma);
}
inline double source_S_dphi(const ModelParams& p, double phi, double sigma, double s) {
  return -p.h.prime(phi) * (p.lambda_c * sigma - s);
}
inline double source_S_dsigma(const ModelParams& p, double phi) {
  return -p.h(phi) * p.lambda_c - p.nutrient_supply;
}

// ---------------------------------------------------------------------------

/// m(t) = sum_i d_c exp(-(t - T_i) / tau) H(t - T_i) with H(0) = 1.
struct DrugSchedule {
  double dose = 0.0;
  std::vector<double> times;
  double lifetime = 1.0;

  void validate() const {
    if (!(lifetime > 0.0)) throw ConfigError("drug lifetime must be positive");
    if (dose < 0.0) throw ConfigError("drug dosage must be non-negative");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw ConfigError("drug delivery times must increase");
  }
};

inline double drug_schedule_eval(const DrugSchedule& s, double t) {
  double m = 0.0;
  for (double ti : s.times)
    if (t >= ti) m += s.dose * std::exp(-(t - ti) / s.lifetime);
  return m;
}

}  // namespace tumopt
