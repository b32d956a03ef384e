#ifndef GDPS_SUBSPACE_HPP
#define GDPS_SUBSPACE_HPP

// Joint SVD over row-stacked task gradients, per-task energy in the top-k
// right singular directions, spectrum concentration, and ridge CCA.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gdps/densela.hpp"
#include "gdps/gradbundle.hpp"
#include "gdps/grouping.hpp"

namespace gdps {

struct JointSvd {
  std::vector<std::string> tasks;
  std::vector<Eigen::Index> row_offsets;  // tasks[i] occupies rows [offset[i], offset[i+1])
  SvdResult svd;
};

/// Row-stacked gradient matrix [G_1; ...; G_n] in task order.
inline Eigen::MatrixXd stacked_gradients(const GradientBundle& bundle, const std::string& layer,
                                         bool normalize_rows = false, std::vector<Eigen::Index>* offsets = nullptr) {
  if (!bundle.has_layer(layer)) throw validation_error("subspace.stack", "unknown layer '" + layer + "'");
  const Eigen::Index d = bundle.layer_cols(layer);
  Eigen::Index total = 0;
  for (const auto& t : bundle.tasks()) {
    const RowMatrix& g = sample_gradients(bundle, t, layer);
    if (g.cols() != d) throw validation_error("subspace.stack", "(" + t + ", " + layer + ") column mismatch");
    total += g.rows();
  }
  Eigen::MatrixXd stacked(total, d);
  Eigen::Index row = 0;
  if (offsets) offsets->clear();
  for (const auto& t : bundle.tasks()) {
    const RowMatrix& g = sample_gradients(bundle, t, layer);
    if (offsets) offsets->push_back(row);
    stacked.middleRows(row, g.rows()) = g;
    if (normalize_rows) {
      for (Eigen::Index i = row; i < row + g.rows(); ++i) {
        const double n = stacked.row(i).norm();
        if (n >= kZeroNorm) stacked.row(i) /= n;
      }
    }
    row += g.rows();
  }
  if (offsets) offsets->push_back(row);
  return stacked;
}

inline JointSvd joint_svd(const GradientBundle& bundle, const std::string& layer, bool normalize_rows = false) {
  JointSvd j;
  j.tasks = bundle.tasks();
  j.svd = svd(stacked_gradients(bundle, layer, normalize_rows, &j.row_offsets));
  return j;
}

struct EnergySplit {
  std::vector<double> energies;     // E_i
  std::vector<double> proportions;  // p_i, sums to 1
};

/// E_i = sum_{j<=k} ||G_i v_j||^2 and p_i = E_i / sum_l E_l.
inline EnergySplit energy_from_joint(const Eigen::MatrixXd& stacked, const JointSvd& joint, int k) {
  const auto rank_bound = joint.svd.sigma.size();
  if (k < 1 || k > rank_bound)
    throw validation_error("subspace.energy", "k=" + std::to_string(k) + " outside [1, " +
                                                  std::to_string(rank_bound) + "]");
  const Eigen::MatrixXd projected = stacked * joint.svd.v.leftCols(k);
  EnergySplit e;
  double total = 0.0;
  for (std::size_t i = 0; i < joint.tasks.size(); ++i) {
    const Eigen::Index begin = joint.row_offsets[i];
    const Eigen::Index rows = joint.row_offsets[i + 1] - begin;
    const double energy = projected.middleRows(begin, rows).squaredNorm();
    e.energies.push_back(energy);
    total += energy;
  }
  if (!(total > 0)) throw analysis_error("subspace.energy", "all task energies are zero");
  for (double v : e.energies) e.proportions.push_back(v / total);
  return e;
}

inline EnergySplit energy_proportions(const GradientBundle& bundle, const std::string& layer, int k,
                                      bool normalize_rows = false) {
  JointSvd joint;
  joint.tasks = bundle.tasks();
  const Eigen::MatrixXd stacked = stacked_gradients(bundle, layer, normalize_rows, &joint.row_offsets);
  joint.svd = svd(stacked);
  return energy_from_joint(stacked, joint, k);
}

struct SpectrumStats {
  double top1_share = 0.0;  // sigma_1^2 / sum sigma_j^2 over the full spectrum
  double gini = 0.0;        // Gini over the leading k squared singular values
};

inline SpectrumStats spectrum_stats(const Eigen::Ref<const Eigen::VectorXd>& sigma, int k) {
  if (sigma.size() < 1) throw validation_error("subspace.spectrum", "empty spectrum");
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) < 0) throw validation_error("subspace.spectrum", "negative singular value");
    if (i > 0 && sigma(i) > sigma(i - 1)) throw validation_error("subspace.spectrum", "spectrum not sorted");
  }
  const Eigen::VectorXd energy = sigma.array().square();
  const double total = energy.sum();
  if (!(total > 0)) throw analysis_error("subspace.spectrum", "all-zero spectrum");
  const Eigen::Index kk = std::clamp<Eigen::Index>(k, 1, sigma.size());
  SpectrumStats s;
  s.top1_share = energy(0) / total;
  s.gini = energy.head(kk).sum() > 0 ? gini(energy.head(kk)) : 0.0;
  return s;
}

struct CcaResult {
  double rho = 0.0;
  Eigen::VectorXd w_a;
  Eigen::VectorXd w_b;
  double lambda = 0.0;
};

/// Leading ridge-regularized canonical correlation between two paired sample
/// matrices. Solved by whitening each side with (Gamma + lambda I)^{-1/2} and
/// taking the top singular triple of the whitened cross-covariance.
inline CcaResult ridge_cca(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b,
                           double lambda, bool center = true) {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw validation_error("subspace.cca", "lambda must be >= 0");
  if (a.rows() != b.rows())
    throw validation_error("subspace.cca", "row-count mismatch " + std::to_string(a.rows()) + " vs " +
                                               std::to_string(b.rows()));
  const Eigen::MatrixXd caa = covariance(a, a, center) + lambda * Eigen::MatrixXd::Identity(a.cols(), a.cols());
  const Eigen::MatrixXd cbb = covariance(b, b, center) + lambda * Eigen::MatrixXd::Identity(b.cols(), b.cols());
  const Eigen::MatrixXd cab = covariance(a, b, center);
  const Eigen::MatrixXd wa = inverse_sqrt_spd(caa, "subspace.cca");
  const Eigen::MatrixXd wb = inverse_sqrt_spd(cbb, "subspace.cca");
  const SvdResult s = svd(wa * cab * wb);
  CcaResult r;
  r.lambda = lambda;
  r.rho = std::clamp(s.sigma(0), 0.0, 1.0);
  r.w_a = wa * s.u.col(0);
  r.w_b = wb * s.v.col(0);
  return r;
}

struct SubspaceOptions {
  int top_k = 10;
  double lambda = 1e-3;
  bool normalize_rows = false;
  bool center = true;
};

struct SubspaceReport {
  std::string layer;
  std::vector<std::string> tasks;
  int k = 0;
  Eigen::VectorXd sigma;
  Eigen::MatrixXd v_k;  // d x k
  EnergySplit energy;
  SpectrumStats stats;
  Eigen::MatrixXd cca;  // n x n leading correlations in the projected subspace
  double lambda = 0.0;
  bool normalize_rows = false;
  std::vector<std::string> warnings;
};

/// Full Method C pass. CCA runs on each task's projection G_i V_k, rows paired
/// by index (truncated to the shorter task when sample counts differ).
inline SubspaceReport subspace_report(const GradientBundle& bundle, const std::string& layer,
                                      const SubspaceOptions& opt = {}) {
  SubspaceReport r;
  r.layer = layer;
  r.tasks = bundle.tasks();
  r.lambda = opt.lambda;
  r.normalize_rows = opt.normalize_rows;
  JointSvd joint;
  joint.tasks = bundle.tasks();
  const Eigen::MatrixXd stacked = stacked_gradients(bundle, layer, opt.normalize_rows, &joint.row_offsets);
  joint.svd = svd(stacked);
  r.sigma = joint.svd.sigma;
  const int k = std::min<int>(opt.top_k, static_cast<int>(r.sigma.size()));
  if (k < opt.top_k)
    r.warnings.push_back("top-k " + std::to_string(opt.top_k) + " exceeds the spectrum length; using " +
                         std::to_string(k));
  r.k = k;
  r.v_k = joint.svd.v.leftCols(k);
  r.energy = energy_from_joint(stacked, joint, k);
  r.stats = spectrum_stats(r.sigma, k);

  const std::size_t n = r.tasks.size();
  std::vector<Eigen::MatrixXd> proj(n);
  Eigen::Index min_rows = stacked.rows();
  bool ragged = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Index begin = joint.row_offsets[i];
    const Eigen::Index rows = joint.row_offsets[i + 1] - begin;
    proj[i] = stacked.middleRows(begin, rows) * r.v_k;
    if (i > 0 && rows != proj[0].rows()) ragged = true;
    min_rows = std::min(min_rows, rows);
  }
  if (ragged)
    r.warnings.push_back("tasks have different sample counts; CCA pairs rows by index over the first " +
                         std::to_string(min_rows) + " samples");
  r.cca = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<double> rho(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    rho[p] = ridge_cca(proj[i].topRows(min_rows), proj[j].topRows(min_rows), opt.lambda, opt.center).rho;
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto i = static_cast<Eigen::Index>(pairs[p].first), j = static_cast<Eigen::Index>(pairs[p].second);
    r.cca(i, j) = r.cca(j, i) = rho[p];
  }
  return r;
}

/// Mean off-diagonal canonical correlation; 0 for a single task.
inline double mean_offdiagonal_rho(const SubspaceReport& r) {
  const Eigen::Index n = r.cca.rows();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) sum += r.cca(i, j);
  return sum / static_cast<double>(n * (n - 1));
}

/// p_g = sum of p_i over the tasks in group g, in plan group order.
inline std::vector<double> group_energy(const std::vector<std::string>& tasks, const std::vector<double>& proportions,
                                        const GroupingPlan& grouping) {
  if (tasks.size() != proportions.size())
    throw validation_error("subspace.group_energy", "task/proportion length mismatch");
  validate_partition(grouping, tasks);
  std::vector<double> pg;
  for (const auto& g : grouping.groups) {
    double sum = 0.0;
    for (const auto& t : g) {
      const auto it = std::find(tasks.begin(), tasks.end(), t);
      sum += proportions[static_cast<std::size_t>(it - tasks.begin())];
    }
    pg.push_back(sum);
  }
  return pg;
}

}  // namespace gdps

#endif
