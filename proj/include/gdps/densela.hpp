#ifndef GDPS_DENSELA_HPP
#define GDPS_DENSELA_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gdps/error.hpp"
#include "gdps/util.hpp"

namespace gdps {

/// Norms below this are treated as zero vectors.
inline constexpr double kZeroNorm = 1e-300;

struct Cosine {
  double value = 0.0;
  bool degenerate = false;  // one of the inputs had (numerically) zero norm
};

/// Cosine similarity clamped to [-1, 1]. Zero-norm inputs give 0 with the
/// degenerate flag set. Bitwise-identical inputs give exactly 1.
inline Cosine cosine(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (u.size() != v.size())
    throw validation_error("densela.cosine", "length mismatch " + std::to_string(u.size()) + " vs " +
                                                 std::to_string(v.size()));
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu < kZeroNorm || nv < kZeroNorm) return {0.0, true};
  if (u == v) return {1.0, false};
  return {std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0), false};
}

/// Thin SVD: m = u * diag(sigma) * v^T, sigma non-increasing.
struct SvdResult {
  Eigen::MatrixXd u;
  Eigen::VectorXd sigma;
  Eigen::MatrixXd v;

  Eigen::MatrixXd reconstruct(Eigen::Index rank) const {
    rank = std::min<Eigen::Index>(rank, sigma.size());
    return u.leftCols(rank) * sigma.head(rank).asDiagonal() * v.leftCols(rank).transpose();
  }
  Eigen::MatrixXd reconstruct() const { return reconstruct(sigma.size()); }
};

inline SvdResult svd(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.rows() < 1 || m.cols() < 1) throw validation_error("densela.svd", "empty matrix");
  if (!m.allFinite()) throw validation_error("densela.svd", "matrix has non-finite entries");
  Eigen::BDCSVD<Eigen::MatrixXd> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw analysis_error("densela.svd", "SVD did not converge on a " + std::to_string(m.rows()) + "x" +
                                            std::to_string(m.cols()) + " matrix (Frobenius norm " +
                                            std::to_string(m.norm()) + ")");
  SvdResult r{solver.matrixU(), solver.singularValues(), solver.matrixV()};
  // Eigen already sorts; enforce the contract against rounding in ties.
  for (Eigen::Index i = 1; i < r.sigma.size(); ++i)
    if (r.sigma(i) > r.sigma(i - 1)) r.sigma(i) = r.sigma(i - 1);
  return r;
}

/// (1/m) * A^T B, with column means removed first when `center` is set.
inline Eigen::MatrixXd covariance(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b,
                                  bool center = true) {
  if (a.rows() != b.rows())
    throw validation_error("densela.covariance", "row-count mismatch " + std::to_string(a.rows()) + " vs " +
                                                     std::to_string(b.rows()));
  const Eigen::Index m = a.rows();
  if (m < (center ? 2 : 1))
    throw validation_error("densela.covariance", "need at least " + std::string(center ? "2" : "1") + " rows");
  if (!center) return (a.transpose() * b) / static_cast<double>(m);
  const Eigen::MatrixXd ac = a.rowwise() - a.colwise().mean();
  const Eigen::MatrixXd bc = b.rowwise() - b.colwise().mean();
  return (ac.transpose() * bc) / static_cast<double>(m);
}

/// Gini concentration: sum_ij |x_i - x_j| / (2 k^2 mean). 0 for a uniform
/// vector, (k-1)/k when one entry holds everything.
inline double gini(const Eigen::Ref<const Eigen::VectorXd>& values) {
  const Eigen::Index k = values.size();
  if (k < 1) throw validation_error("densela.gini", "empty vector");
  std::vector<double> x(values.data(), values.data() + k);
  for (double v : x) {
    if (!std::isfinite(v)) throw validation_error("densela.gini", "non-finite entry");
    if (v < 0) throw validation_error("densela.gini", "negative entry");
  }
  std::sort(x.begin(), x.end());
  double total = 0.0;
  double weighted = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    total += x[static_cast<std::size_t>(i)];
    weighted += static_cast<double>(2 * (i + 1) - k - 1) * x[static_cast<std::size_t>(i)];
  }
  if (total <= 0) throw validation_error("densela.gini", "all-zero vector");
  return std::max(0.0, weighted / (static_cast<double>(k) * total));
}

/// Symmetric inverse square root of an SPD matrix. Throws if the smallest
/// eigenvalue is not safely positive.
inline Eigen::MatrixXd inverse_sqrt_spd(const Eigen::Ref<const Eigen::MatrixXd>& s, const std::string& stage,
                                        double relative_floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw analysis_error(stage, "eigendecomposition failed");
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 0.0);
  if (!(ev.minCoeff() > relative_floor * std::max(top, 1e-300)))
    throw analysis_error(stage, "covariance is singular or ill-conditioned (min eigenvalue " +
                                    std::to_string(ev.minCoeff()) + ", max " + std::to_string(top) +
                                    "); use a positive ridge lambda");
  return eig.eigenvectors() * ev.cwiseInverse().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace gdps

#endif
