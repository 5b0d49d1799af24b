#pragma once

// Gaussian RBF terms, sums, Gaussian-mixture transition kernels with affine
// means, and the closed-form expectations that tie them together.

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "reachbound/linalg.hpp"

namespace reachbound {

/// Exponents below this contribute exactly zero.
inline constexpr double kExpFloor = -700.0;

/// log φ(x; mean, cov) for the normalized Gaussian density.
inline double gaussian_log_pdf(const Vector& x, const Vector& mean, const SpdMatrix& cov) {
  const double n = static_cast<double>(x.size());
  return -0.5 * (n * kLog2Pi + cov.log_det() + cov.mahalanobis_sq(x - mean));
}

inline double gaussian_pdf(const Vector& x, const Vector& mean, const SpdMatrix& cov) {
  const double lp = gaussian_log_pdf(x, mean, cov);
  return lp < kExpFloor ? 0.0 : std::exp(lp);
}

struct RbfTerm {
  double weight = 1.0;
  Vector mean;
  SpdMatrix cov;

  RbfTerm() = default;
  RbfTerm(double w, Vector mu, const Matrix& sigma) : weight(w), mean(std::move(mu)), cov(sigma) {
    require(mean.size() == cov.dim(), "RBF term mean and covariance dims differ");
  }
  RbfTerm(double w, Vector mu, SpdMatrix sigma) : weight(w), mean(std::move(mu)), cov(std::move(sigma)) {
    require(mean.size() == cov.dim(), "RBF term mean and covariance dims differ");
  }

  int dim() const { return static_cast<int>(mean.size()); }

  double evaluate(const Vector& x) const {
    if (weight == 0.0) return 0.0;
    return weight * gaussian_pdf(x, mean, cov);
  }
};

/// Weighted sum of Gaussian densities. Weights may be of any sign unless the
/// sum is used where nonnegativity is required; see require_positive_weights().
class RbfSum {
 public:
  RbfSum() = default;

  explicit RbfSum(std::vector<RbfTerm> terms) : terms_(std::move(terms)) {
    require(!terms_.empty(), "RBF sum needs at least one term");
    dim_ = terms_.front().dim();
    require(dim_ >= 1, "RBF sum dimension must be positive");
    for (const auto& t : terms_) require(t.dim() == dim_, "all RBF terms must share dim");
  }

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(terms_.size()); }
  const std::vector<RbfTerm>& terms() const { return terms_; }
  const RbfTerm& term(int i) const { return terms_.at(i); }

  bool nonnegative() const {
    for (const auto& t : terms_)
      if (t.weight < 0.0) return false;
    return true;
  }

  void require_positive_weights(const char* context) const {
    for (const auto& t : terms_)
      require(t.weight > 0.0 && std::isfinite(t.weight), std::string(context) + ": RBF weights must be positive");
  }

  double evaluate(const Vector& x) const {
    require(x.size() == dim_, "RBF sum evaluated at a point of wrong dimension");
    double acc = 0.0;
    for (const auto& t : terms_) acc += t.evaluate(x);
    return acc;
  }

  /// log of a nonnegative sum, accumulated in the log domain; -inf when every
  /// term vanishes.
  double log_evaluate(const Vector& x) const {
    require(x.size() == dim_, "RBF sum evaluated at a point of wrong dimension");
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> logs;
    logs.reserve(terms_.size());
    for (const auto& t : terms_) {
      if (t.weight <= 0.0) continue;
      const double l = std::log(t.weight) + gaussian_log_pdf(x, t.mean, t.cov);
      logs.push_back(l);
      best = std::max(best, l);
    }
    if (!std::isfinite(best)) return best;
    double s = 0.0;
    for (double l : logs) s += std::exp(l - best);
    return best + std::log(s);
  }

  RbfSum scaled(double factor) const {
    std::vector<RbfTerm> out = terms_;
    for (auto& t : out) t.weight *= factor;
    return RbfSum(std::move(out));
  }

 private:
  int dim_ = 0;
  std::vector<RbfTerm> terms_;
};

/// ∫ ψ(x) dx over Rⁿ: each normalized Gaussian integrates to one.
inline double integral_lebesgue(const RbfSum& sum) {
  double s = 0.0;
  for (const auto& t : sum.terms()) s += t.weight;
  return s;
}

struct ProductFactorization {
  double scale;
  RbfTerm merged;
};

/// φ(x;μa,Σa)·φ(x;μb,Σb) = φ(μa;μb,Σa+Σb)·φ(x;μ̄,Σ̄), Σ̄ = (Σa⁻¹+Σb⁻¹)⁻¹,
/// μ̄ = Σ̄(Σa⁻¹μa + Σb⁻¹μb). Input weights are ignored.
inline ProductFactorization product_factorization(const RbfTerm& a, const RbfTerm& b) {
  require(a.dim() == b.dim(), "product_factorization: dimension mismatch");
  const SpdMatrix sum_cov(a.cov.matrix() + b.cov.matrix());
  const double scale = gaussian_pdf(a.mean, b.mean, sum_cov);
  // Σ̄ = Σa (Σa+Σb)⁻¹ Σb avoids inverting either factor.
  const Matrix merged_cov = symmetrize(a.cov.matrix() * sum_cov.solve(b.cov.matrix()));
  const Vector merged_mean =
      b.cov.matrix() * sum_cov.solve(a.mean) + a.cov.matrix() * sum_cov.solve(b.mean);
  return {scale, RbfTerm(1.0, merged_mean, merged_cov)};
}

/// E[g(y)] for y distributed with the given Gaussian-mixture density:
/// ΣᵢΣⱼ wᵢ w̄ⱼ φ(μ̄ⱼ; μᵢ, Σᵢ+Σ̄ⱼ).
inline double expected_value(const RbfSum& g, const RbfSum& density) {
  require(g.dim() == density.dim(), "expected_value: dimension mismatch");
  double total = 0.0;
  for (const auto& t : density.terms()) {
    require(t.weight >= 0.0, "expected_value: density weights must be nonnegative");
    total += t.weight;
  }
  require(std::abs(total - 1.0) <= 1e-9, "expected_value: density weights must sum to one");
  double acc = 0.0;
  for (const auto& gi : g.terms()) {
    for (const auto& dj : density.terms()) {
      if (dj.weight == 0.0 || gi.weight == 0.0) continue;
      const SpdMatrix cov(gi.cov.matrix() + dj.cov.matrix());
      acc += gi.weight * dj.weight * gaussian_pdf(dj.mean, gi.mean, cov);
    }
  }
  return acc;
}

/// Mixture density Σⱼ w̄ⱼ φ(y; Aⱼx + Bⱼu + cⱼ, Σⱼ).
class TransitionKernel {
 public:
  struct Component {
    double weight;
    Matrix a;
    Matrix b;
    Vector c;
    SpdMatrix cov;
  };

  TransitionKernel() = default;

  TransitionKernel(int n, int m, std::vector<Component> comps) : n_(n), m_(m), comps_(std::move(comps)) {
    require(n >= 1 && m >= 1, "kernel dims must be positive");
    require(!comps_.empty(), "kernel needs at least one component");
    double total = 0.0;
    for (const auto& c : comps_) {
      require(c.weight >= 0.0, "kernel mixture weights must be nonnegative");
      require(c.a.rows() == n && c.a.cols() == n, "kernel A has wrong shape");
      require(c.b.rows() == n && c.b.cols() == m, "kernel B has wrong shape");
      require(c.c.size() == n, "kernel offset has wrong size");
      require(c.cov.dim() == n, "kernel covariance has wrong size");
      total += c.weight;
    }
    require(std::abs(total - 1.0) <= 1e-12, "kernel mixture weights must sum to one");
  }

  /// x⁺ = A x + B u + ω with ω ~ N(0, Σ).
  static TransitionKernel linear_gaussian(const Matrix& a, const Matrix& b, const Matrix& noise_cov) {
    const int n = static_cast<int>(a.rows());
    const int m = static_cast<int>(b.cols());
    return TransitionKernel(n, m, {Component{1.0, a, b, Vector::Zero(n), SpdMatrix(noise_cov)}});
  }

  int state_dim() const { return n_; }
  int control_dim() const { return m_; }
  int size() const { return static_cast<int>(comps_.size()); }
  const std::vector<Component>& components() const { return comps_; }
  const Component& component(int j) const { return comps_.at(j); }

  Vector component_mean(int j, const Vector& x, const Vector& u) const {
    const auto& c = comps_.at(j);
    return c.a * x + c.b * u + c.c;
  }

  /// Density of the next state at (x, u) as an RBF sum.
  RbfSum density(const Vector& x, const Vector& u) const {
    require(x.size() == n_ && u.size() == m_, "kernel density: dimension mismatch");
    std::vector<RbfTerm> terms;
    for (int j = 0; j < size(); ++j) terms.emplace_back(comps_[j].weight, component_mean(j, x, u), comps_[j].cov);
    return RbfSum(std::move(terms));
  }

 private:
  int n_ = 0;
  int m_ = 0;
  std::vector<Component> comps_;
};

/// One term of h(x,u) = E[g(x⁺) | x,u] = Σ weight·φ(A x + B u + c; mean, cov).
struct PushforwardTerm {
  double weight;
  Vector mean;
  SpdMatrix cov;  // Σᵢ + Σⱼ
  Matrix a;
  Matrix b;
  Vector c;

  double log_density(const Vector& x, const Vector& u) const {
    return gaussian_log_pdf(a * x + b * u + c, mean, cov);
  }
};

/// The M·J terms of h(x,u); index i*J + j pairs g-term i with kernel component j.
inline std::vector<PushforwardTerm> pushforward_params(const RbfSum& g, const TransitionKernel& kernel) {
  require(g.dim() == kernel.state_dim(), "pushforward_params: dimension mismatch");
  std::vector<PushforwardTerm> out;
  out.reserve(static_cast<size_t>(g.size()) * kernel.size());
  for (const auto& gi : g.terms()) {
    for (const auto& cj : kernel.components()) {
      out.push_back(PushforwardTerm{gi.weight * cj.weight, gi.mean, SpdMatrix(gi.cov.matrix() + cj.cov.matrix()),
                                    cj.a, cj.b, cj.c});
    }
  }
  return out;
}

inline double evaluate_pushforward(const std::vector<PushforwardTerm>& terms, const Vector& x, const Vector& u) {
  double acc = 0.0;
  for (const auto& t : terms) {
    if (t.weight == 0.0) continue;
    const double lp = t.log_density(x, u);
    if (lp >= kExpFloor) acc += t.weight * std::exp(lp);
  }
  return acc;
}

struct ValueGradHess {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// h(u) = Σ wᵢ φᵢ with φᵢ = φ(A x + B u + c; μᵢ, Σᵢ+Σⱼ), together with its
/// gradient and Hessian in u. Mixtures are handled by summing components.
inline ValueGradHess grad_hess_u(const RbfSum& g, const TransitionKernel& kernel, const Vector& x, const Vector& u) {
  const int m = kernel.control_dim();
  require(x.size() == kernel.state_dim() && u.size() == m, "grad_hess_u: dimension mismatch");
  require(g.dim() == kernel.state_dim(), "grad_hess_u: value function dimension mismatch");
  ValueGradHess out{0.0, Vector::Zero(m), Matrix::Zero(m, m)};
  for (const auto& t : pushforward_params(g, kernel)) {
    const double lp = t.log_density(x, u);
    if (lp < kExpFloor || t.weight == 0.0) continue;
    const double wphi = t.weight * std::exp(lp);
    const Vector r = t.a * x + t.b * u + t.c - t.mean;
    const Matrix lam_b = t.cov.solve(t.b);  // Λ B
    const Vector bt_lam_r = lam_b.transpose() * r;
    out.value += wphi;
    out.gradient -= wphi * bt_lam_r;
    out.hessian += wphi * (bt_lam_r * bt_lam_r.transpose() - t.b.transpose() * lam_b);
  }
  return out;
}

/// Value, gradient and Hessian of log h(u); scale-free, so usable far in the tails.
inline ValueGradHess grad_hess_log_u(const std::vector<PushforwardTerm>& terms, const Vector& x, const Vector& u) {
  const int m = static_cast<int>(u.size());
  std::vector<double> logs(terms.size(), -std::numeric_limits<double>::infinity());
  double best = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].weight <= 0.0) continue;
    logs[i] = std::log(terms[i].weight) + terms[i].log_density(x, u);
    best = std::max(best, logs[i]);
  }
  ValueGradHess out{best, Vector::Zero(m), Matrix::Zero(m, m)};
  if (!std::isfinite(best)) return out;
  double total = 0.0;
  Matrix second = Matrix::Zero(m, m);
  for (size_t i = 0; i < terms.size(); ++i) {
    if (!std::isfinite(logs[i])) continue;
    const double p = std::exp(logs[i] - best);
    const auto& t = terms[i];
    const Vector r = t.a * x + t.b * u + t.c - t.mean;
    const Matrix lam_b = t.cov.solve(t.b);
    const Vector gi = -(lam_b.transpose() * r);
    total += p;
    out.gradient += p * gi;
    second += p * (gi * gi.transpose() - t.b.transpose() * lam_b);
  }
  out.value = best + std::log(total);
  out.gradient /= total;
  out.hessian = second / total - out.gradient * out.gradient.transpose();
  return out;
}

// --- Text serialization -------------------------------------------------------
//
//   rbfsum <n> <M>
//   <w> <mu_1> ... <mu_n> <S_11> <S_12> ... <S_nn>      (one line per term)
//
// Numbers are printed with "%.17g"; covariances are row-major.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_rbf_sum(std::ostream& os, const RbfSum& sum) {
  os << "rbfsum " << sum.dim() << ' ' << sum.size() << '\n';
  for (const auto& t : sum.terms()) {
    os << format_double(t.weight);
    for (int i = 0; i < sum.dim(); ++i) os << ' ' << format_double(t.mean(i));
    const Matrix& s = t.cov.matrix();
    for (int r = 0; r < sum.dim(); ++r)
      for (int c = 0; c < sum.dim(); ++c) os << ' ' << format_double(s(r, c));
    os << '\n';
  }
}

/// Reads the body of an rbfsum record whose header has already been consumed.
inline RbfSum read_rbf_terms(std::istream& is, int n, int count) {
  require(n >= 1 && count >= 1, "rbfsum header must have positive n and M");
  std::vector<RbfTerm> terms;
  for (int k = 0; k < count; ++k) {
    double w;
    Vector mu(n);
    Matrix s(n, n);
    if (!(is >> w)) throw std::runtime_error("rbfsum: truncated term list");
    for (int i = 0; i < n; ++i)
      if (!(is >> mu(i))) throw std::runtime_error("rbfsum: truncated mean");
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (!(is >> s(r, c))) throw std::runtime_error("rbfsum: truncated covariance");
    terms.emplace_back(w, mu, s);
  }
  return RbfSum(std::move(terms));
}

inline RbfSum read_rbf_sum(std::istream& is) {
  std::string tag;
  int n = 0, count = 0;
  if (!(is >> tag >> n >> count) || tag != "rbfsum") throw std::runtime_error("rbfsum: bad header");
  return read_rbf_terms(is, n, count);
}

}  // namespace reachbound
