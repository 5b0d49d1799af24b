#pragma once

// Quadratic sets: intersections of homogenized inequalities [x;1]ᵀ A_j [x;1] >= 0.

#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "reachbound/linalg.hpp"

namespace reachbound {

/// Symmetric (d+1)x(d+1) matrix acting on the homogenized vector [x; 1].
class QuadraticForm {
 public:
  QuadraticForm() = default;

  explicit QuadraticForm(Matrix m) : m_(std::move(m)) {
    require(m_.rows() == m_.cols() && m_.rows() >= 2, "quadratic form must be square of size dim+1 >= 2");
    require(is_symmetric(m_, 1e-12), "quadratic form must be symmetric");
    m_ = symmetrize(m_);
  }

  int dim() const { return static_cast<int>(m_.rows()) - 1; }
  const Matrix& matrix() const { return m_; }

  double evaluate(const Vector& x) const {
    require(x.size() == dim(), "point dimension does not match quadratic form");
    const int d = dim();
    return x.dot(m_.topLeftCorner(d, d) * x) + 2.0 * m_.col(d).head(d).dot(x) + m_(d, d);
  }

  QuadraticForm negated() const { return QuadraticForm(-m_); }

  /// Re-embeds the form into a larger homogenized space. `offset` is the position
  /// of this form's first coordinate inside the new variable vector of size `new_dim`.
  QuadraticForm embedded(int new_dim, int offset) const {
    const int d = dim();
    require(offset >= 0 && offset + d <= new_dim, "embedding out of range");
    Matrix out = Matrix::Zero(new_dim + 1, new_dim + 1);
    out.block(offset, offset, d, d) = m_.topLeftCorner(d, d);
    out.block(offset, new_dim, d, 1) = m_.col(d).head(d);
    out.block(new_dim, offset, 1, d) = m_.row(d).head(d);
    out(new_dim, new_dim) = m_(d, d);
    return QuadraticForm(out);
  }

 private:
  Matrix m_;
};

struct Box {
  Vector lower;
  Vector upper;
};

/// Conjunction of quadratic inequalities over R^dim. Boundary points are members.
class QuadraticSet {
 public:
  QuadraticSet() = default;

  explicit QuadraticSet(std::vector<QuadraticForm> forms) : forms_(std::move(forms)) {
    require(!forms_.empty(), "quadratic set needs at least one form");
    dim_ = forms_.front().dim();
    for (const auto& f : forms_) require(f.dim() == dim_, "all forms of a quadratic set must share dim");
  }

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(forms_.size()); }
  const std::vector<QuadraticForm>& forms() const { return forms_; }
  const QuadraticForm& form(int j) const { return forms_.at(j); }

  bool contains(const Vector& x, double tol = 0.0) const {
    require(x.size() == dim_, "point dimension does not match set");
    for (const auto& f : forms_)
      if (f.evaluate(x) < -tol) return false;
    return true;
  }

  /// Smallest form value; nonnegative iff x is a member.
  double margin(const Vector& x) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& f : forms_) m = std::min(m, f.evaluate(x));
    return m;
  }

  /// Axis-aligned box implied by the forms whose quadratic part is negative
  /// definite on their support. Empty when some coordinate is left unbounded.
  std::optional<Box> bounding_box() const {
    const double inf = std::numeric_limits<double>::infinity();
    Box box{Vector::Constant(dim_, -inf), Vector::Constant(dim_, inf)};
    for (const auto& f : forms_) {
      const Matrix& m = f.matrix();
      std::vector<int> support;
      for (int i = 0; i < dim_; ++i) {
        if (m.row(i).cwiseAbs().maxCoeff() > 0.0) support.push_back(i);
      }
      if (support.empty()) continue;
      const int s = static_cast<int>(support.size());
      Matrix q(s, s);
      Vector lin(s);
      for (int a = 0; a < s; ++a) {
        lin(a) = m(support[a], dim_);
        for (int b = 0; b < s; ++b) q(a, b) = -m(support[a], support[b]);
      }
      Eigen::LLT<Matrix> llt(q);
      if (llt.info() != Eigen::Success || min_eigenvalue(q) <= 0.0) continue;
      // -xᵀQx + 2 linᵀx + r >= 0  <=>  (x-c)ᵀQ(x-c) <= r + cᵀQc with c = Q⁻¹ lin.
      const Vector c = llt.solve(lin);
      const double r2 = m(dim_, dim_) + c.dot(q * c);
      if (r2 < 0.0) return Box{Vector::Constant(dim_, 0.0), Vector::Constant(dim_, 0.0)};
      const Matrix qinv = llt.solve(Matrix::Identity(s, s));
      for (int a = 0; a < s; ++a) {
        const double half = std::sqrt(r2 * qinv(a, a));
        const int i = support[a];
        box.lower(i) = std::max(box.lower(i), c(a) - half);
        box.upper(i) = std::min(box.upper(i), c(a) + half);
      }
    }
    for (int i = 0; i < dim_; ++i)
      if (!std::isfinite(box.lower(i)) || !std::isfinite(box.upper(i))) return std::nullopt;
    return box;
  }

 private:
  int dim_ = 0;
  std::vector<QuadraticForm> forms_;
};

/// {x : xᵀQx <= rho²}, stored as the single form [[-Q, 0], [0, rho²]].
inline QuadraticSet ellipsoid(const Matrix& q, double rho) {
  require(q.rows() == q.cols() && q.rows() >= 1, "ellipsoid shape must be square");
  require(is_symmetric(q, 1e-12), "ellipsoid shape must be symmetric");
  require(rho > 0.0, "ellipsoid radius must be positive");
  const int n = static_cast<int>(q.rows());
  Matrix m = Matrix::Zero(n + 1, n + 1);
  m.topLeftCorner(n, n) = -symmetrize(q);
  m(n, n) = rho * rho;
  return QuadraticSet({QuadraticForm(m)});
}

struct EllipsoidParams {
  Matrix shape;
  double rho;
};

/// Recovers (Q, rho) when the set is a single centered ellipsoid xᵀQx <= rho².
inline std::optional<EllipsoidParams> centered_ellipsoid(const QuadraticSet& s) {
  if (s.size() != 1) return std::nullopt;
  const Matrix& m = s.form(0).matrix();
  const int n = s.dim();
  if (m.col(n).head(n).cwiseAbs().maxCoeff() != 0.0 || m(n, n) <= 0.0) return std::nullopt;
  Matrix q = -m.topLeftCorner(n, n);
  if (min_eigenvalue(q) < 0.0) return std::nullopt;
  return EllipsoidParams{q, std::sqrt(m(n, n))};
}

/// {x : aᵀx <= b} as a degenerate quadratic form.
inline QuadraticSet halfspace(const Vector& a, double b) {
  require(a.size() >= 1, "halfspace normal must be nonempty");
  const int n = static_cast<int>(a.size());
  Matrix m = Matrix::Zero(n + 1, n + 1);
  m.col(n).head(n) = -0.5 * a;
  m.row(n).head(n) = -0.5 * a.transpose();
  m(n, n) = b;
  return QuadraticSet({QuadraticForm(m)});
}

inline QuadraticSet intersect(const QuadraticSet& a, const QuadraticSet& b) {
  require(a.dim() == b.dim(), "intersection of sets with different dims");
  std::vector<QuadraticForm> forms = a.forms();
  forms.insert(forms.end(), b.forms().begin(), b.forms().end());
  return QuadraticSet(std::move(forms));
}

/// Safe set minus the interior of a single-form target: the target inequality is
/// flipped, so the boundary of the target belongs to the ring.
inline QuadraticSet ring(const QuadraticSet& safe, const QuadraticSet& target) {
  require(safe.dim() == target.dim(), "ring: dimension mismatch");
  require(target.size() == 1, "ring: target must be a single-form set");
  std::vector<QuadraticForm> forms = safe.forms();
  forms.push_back(target.form(0).negated());
  return QuadraticSet(std::move(forms));
}

/// Set over (x, u) whose forms are the inputs zero-padded onto [x; u; 1].
inline QuadraticSet product(const QuadraticSet& state, const QuadraticSet& control) {
  const int n = state.dim();
  const int m = control.dim();
  std::vector<QuadraticForm> forms;
  forms.reserve(state.size() + control.size());
  for (const auto& f : state.forms()) forms.push_back(f.embedded(n + m, 0));
  for (const auto& f : control.forms()) forms.push_back(f.embedded(n + m, n));
  return QuadraticSet(std::move(forms));
}

/// Uniform draw from the set by rejection inside `box`. Throws once
/// `max_attempts` candidates have all been rejected.
inline Vector sample_in_set(const QuadraticSet& set, const Box& box, std::mt19937_64& rng, int max_attempts) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(set.dim());
  for (int a = 0; a < max_attempts; ++a) {
    for (int i = 0; i < set.dim(); ++i) x(i) = box.lower(i) + (box.upper(i) - box.lower(i)) * unit(rng);
    if (set.contains(x)) return x;
  }
  throw std::runtime_error("rejection sampling found no point of the set after " + std::to_string(max_attempts) +
                           " attempts");
}

inline Box require_bounding_box(const QuadraticSet& set, const char* what) {
  auto box = set.bounding_box();
  if (!box) throw std::invalid_argument(std::string(what) + ": set has no finite bounding box");
  return *box;
}

}  // namespace reachbound
