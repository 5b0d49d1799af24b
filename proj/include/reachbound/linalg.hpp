#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace reachbound {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Largest absolute asymmetry relative to the largest entry.
inline double asymmetry(const Matrix& m) {
  if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
  if (m.size() == 0) return 0.0;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline bool is_symmetric(const Matrix& m, double tol = 1e-12) {
  return asymmetry(m) <= tol;
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

/// Symmetric positive-definite matrix with its Cholesky factor cached.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  explicit SpdMatrix(Matrix m) : m_(std::move(m)) {
    require(m_.rows() == m_.cols() && m_.rows() > 0, "covariance must be square and nonempty");
    require(is_symmetric(m_, 1e-10), "covariance must be symmetric");
    m_ = symmetrize(m_);
    llt_.compute(m_);
    require(llt_.info() == Eigen::Success, "covariance is not positive definite");
    const auto& l = llt_.matrixL();
    log_det_ = 0.0;
    for (Eigen::Index i = 0; i < m_.rows(); ++i) {
      const double d = Matrix(l)(i, i);
      require(d > 0.0 && std::isfinite(d), "covariance is not positive definite");
      log_det_ += 2.0 * std::log(d);
    }
  }

  const Matrix& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }
  double log_det() const { return log_det_; }
  Matrix lower() const { return llt_.matrixL(); }
  Matrix inverse() const { return llt_.solve(Matrix::Identity(dim(), dim())); }
  Vector solve(const Vector& b) const { return llt_.solve(b); }
  Matrix solve(const Matrix& b) const { return llt_.solve(b); }

  /// vᵀ M⁻¹ v computed through the triangular factor.
  double mahalanobis_sq(const Vector& v) const {
    const Vector t = llt_.matrixL().solve(v);
    return t.squaredNorm();
  }

 private:
  Matrix m_;
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace reachbound
