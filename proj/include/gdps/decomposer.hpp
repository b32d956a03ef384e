#ifndef GDPS_DECOMPOSER_HPP
#define GDPS_DECOMPOSER_HPP

// Turns a unified up/down feed-forward block into a shared branch plus one
// private branch per task group:
//
//   W_equiv        = W2 * W1                          (d_model x d_model)
//   shared factors = U_r sqrt(S_r), sqrt(S_r) V_r^T   padded with noise to d_s
//   W_res          = W_equiv - U_r S_r V_r^T
//   private g      = top-t SVD factors of p_g * W_res padded with noise to d_p
//
// Forward for a task routed to group g:
//   out = act(x Ws_up^T) Ws_down^T + act(x Wg_up^T) Wg_down^T

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gdps/densela.hpp"
#include "gdps/grouping.hpp"

namespace gdps {

enum class Activation { identity, relu, silu, tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  throw validation_error("decomposer.activation", "unknown activation '" + s + "'");
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0 ? z : 0.0;
    case Activation::silu: return z / (1.0 + std::exp(-z));
    case Activation::tanh: return std::tanh(z);
  }
  return z;
}

inline double activate_derivative(Activation a, double z) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0 ? 1.0 : 0.0;
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    }
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

inline Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  if (a == Activation::identity) return z;
  return z.unaryExpr([a](double v) { return activate(a, v); });
}

/// Unified block: hidden = act(x W1^T), out = hidden W2^T.
struct UnifiedFfnWeights {
  Eigen::MatrixXd w1;  // d_ff x d_model
  Eigen::MatrixXd w2;  // d_model x d_ff

  Eigen::Index d_model() const { return w1.cols(); }
  Eigen::Index d_ff() const { return w1.rows(); }

  void validate() const {
    if (w1.size() == 0 || w2.size() == 0) throw validation_error("decomposer.weights", "empty weights");
    if (w2.rows() != w1.cols() || w2.cols() != w1.rows())
      throw analysis_error("decomposer.weights", "shape mismatch: w1 is " + std::to_string(w1.rows()) + "x" +
                                                     std::to_string(w1.cols()) + ", w2 is " +
                                                     std::to_string(w2.rows()) + "x" + std::to_string(w2.cols()));
    if (!w1.allFinite() || !w2.allFinite()) throw validation_error("decomposer.weights", "non-finite weights");
  }
};

struct DecompositionPlan {
  GroupingPlan grouping;
  double shared_ratio = 0.5;
  int d_model = 0;
  int d_ff = 0;
  int d_s = 0;           // shared hidden width
  int d_p = 0;           // private hidden width per group
  std::vector<double> p_g;
  int r = 0;             // shared truncation rank
  int private_rank = 0;  // t, directions kept per private branch
  double noise_scale = 1e-4;
  double private_noise_scale = 1e-4;  // noise_scale, optionally scaled by the CCA coupling
  bool cca_coupling = false;
  std::uint64_t seed = kDefaultSeed;
  Activation activation = Activation::silu;
  std::vector<std::string> notes;

  int groups() const { return grouping.k(); }

  void validate() const {
    const int n = groups();
    if (n < 1) throw validation_error("decomposer.plan", "plan has no groups");
    if (d_s <= 0 || d_p <= 0) throw validation_error("decomposer.plan", "d_s and d_p must be positive");
    if (d_s + n * d_p != d_ff)
      throw validation_error("decomposer.plan", "d_s + N*d_p = " + std::to_string(d_s + n * d_p) +
                                                    " does not equal d_ff = " + std::to_string(d_ff));
    if (static_cast<int>(p_g.size()) != n) throw validation_error("decomposer.plan", "p_g length differs from group count");
    double sum = 0.0;
    for (double p : p_g) {
      if (!(p >= 0)) throw validation_error("decomposer.plan", "negative group energy");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw validation_error("decomposer.plan", "p_g does not sum to 1");
    if (r < 1 || r > std::min(d_model, d_s))
      throw validation_error("decomposer.plan", "r=" + std::to_string(r) + " outside [1, min(d_model, d_s)]");
    if (private_rank < 1 || private_rank > std::min(d_model, d_p))
      throw validation_error("decomposer.plan", "private rank " + std::to_string(private_rank) +
                                                    " outside [1, min(d_model, d_p)]");
    if (!(noise_scale >= 0) || !(private_noise_scale >= 0))
      throw validation_error("decomposer.plan", "noise scale must be >= 0");
  }
};

struct PlanOptions {
  double noise_scale = 1e-4;
  std::uint64_t seed = kDefaultSeed;
  Activation activation = Activation::silu;
  int r = 0;             // 0: d_s / 4
  int private_rank = 0;  // 0: d_p / N
  bool cca_coupling = false;
  double mean_offdiagonal_rho = 0.0;  // used when cca_coupling is set
};

/// Sizes a plan. d_s is round(ratio * d_ff) moved down to the nearest value
/// that is a multiple of N and leaves d_ff - d_s divisible by N.
inline DecompositionPlan make_plan(const GroupingPlan& grouping, double shared_ratio, int d_model, int d_ff,
                                   std::vector<double> p_g, const PlanOptions& opt = {}) {
  DecompositionPlan plan;
  plan.grouping = grouping;
  plan.shared_ratio = shared_ratio;
  plan.d_model = d_model;
  plan.d_ff = d_ff;
  plan.p_g = std::move(p_g);
  plan.noise_scale = opt.noise_scale;
  plan.seed = opt.seed;
  plan.activation = opt.activation;
  plan.cca_coupling = opt.cca_coupling;
  const int n = grouping.k();
  if (n < 1) throw validation_error("decomposer.plan", "grouping has no groups");
  if (!(shared_ratio > 0 && shared_ratio < 1)) throw validation_error("decomposer.plan", "shared ratio must lie in (0, 1)");
  const int target = static_cast<int>(std::lround(shared_ratio * d_ff));
  int d_s = target - target % n;
  while (d_s > 0 && (d_ff - d_s) % n != 0) d_s -= n;
  if (d_s != target) plan.notes.push_back("d_s rounded down from " + std::to_string(target) + " to " + std::to_string(d_s));
  plan.d_s = d_s;
  plan.d_p = d_s > 0 ? (d_ff - d_s) / n : 0;
  plan.r = opt.r > 0 ? opt.r : std::max(1, d_s / 4);
  plan.private_rank = opt.private_rank > 0 ? opt.private_rank : std::max(1, plan.d_p / n);
  plan.private_noise_scale = opt.noise_scale;
  if (opt.cca_coupling) plan.private_noise_scale = opt.noise_scale * (1.0 - opt.mean_offdiagonal_rho);
  if (d_s <= 0 || plan.d_p <= 0)
    throw validation_error("decomposer.plan", "cannot split d_ff=" + std::to_string(d_ff) + " into " +
                                                  std::to_string(n) + " private groups at ratio " +
                                                  std::to_string(shared_ratio));
  plan.validate();
  return plan;
}

// ---------------------------------------------------------------------------

inline Eigen::MatrixXd equiv_weight(const UnifiedFfnWeights& w) {
  w.validate();
  return w.w2 * w.w1;
}

struct SharedFactors {
  Eigen::MatrixXd w1_factor;       // d_model x d_s : U_r sqrt(S_r) | noise
  Eigen::MatrixXd w2_factor;       // d_s x d_model : sqrt(S_r) V_r^T / noise
  Eigen::MatrixXd w_shared_equiv;  // U_r S_r V_r^T
  Eigen::VectorXd sigma;           // full spectrum of W_equiv
};

namespace detail {

/// Symmetric sqrt(S) factors of the top `rank` directions of `m`, padded along
/// the inner dimension to `width` with N(0, noise^2) entries.
inline void padded_factors(const SvdResult& s, int rank, int width, double noise, std::mt19937_64& rng,
                           Eigen::MatrixXd& left, Eigen::MatrixXd& right) {
  const Eigen::Index n_rows = s.u.rows();
  const Eigen::Index n_cols = s.v.rows();
  const Eigen::VectorXd root = s.sigma.head(rank).cwiseSqrt();
  left = Eigen::MatrixXd::Zero(n_rows, width);
  right = Eigen::MatrixXd::Zero(width, n_cols);
  left.leftCols(rank) = s.u.leftCols(rank) * root.asDiagonal();
  right.topRows(rank) = root.asDiagonal() * s.v.leftCols(rank).transpose();
  if (noise > 0 && width > rank) {
    left.rightCols(width - rank) = gaussian_matrix(n_rows, width - rank, rng, noise);
    right.bottomRows(width - rank) = gaussian_matrix(width - rank, n_cols, rng, noise);
  }
}

}  // namespace detail

inline SharedFactors shared_factors(const Eigen::MatrixXd& w_equiv, const DecompositionPlan& plan) {
  if (!w_equiv.allFinite()) throw validation_error("decomposer.shared", "non-finite W_equiv");
  const int bound = static_cast<int>(std::min(w_equiv.rows(), w_equiv.cols()));
  if (plan.r < 1 || plan.r > bound)
    throw validation_error("decomposer.shared", "r=" + std::to_string(plan.r) + " exceeds rank bound " +
                                                    std::to_string(bound));
  if (plan.r > plan.d_s) throw validation_error("decomposer.shared", "r exceeds d_s");
  const SvdResult s = svd(w_equiv);
  std::mt19937_64 rng(derive_seed(plan.seed, 0));
  SharedFactors f;
  detail::padded_factors(s, plan.r, plan.d_s, plan.noise_scale, rng, f.w1_factor, f.w2_factor);
  f.w_shared_equiv = s.reconstruct(plan.r);
  f.sigma = s.sigma;
  return f;
}

inline Eigen::MatrixXd residual(const Eigen::MatrixXd& w_equiv, const Eigen::MatrixXd& w_shared_equiv) {
  if (w_equiv.rows() != w_shared_equiv.rows() || w_equiv.cols() != w_shared_equiv.cols())
    throw validation_error("decomposer.residual", "shape mismatch");
  return w_equiv - w_shared_equiv;
}

struct PrivateBranch {
  Eigen::MatrixXd up;    // d_p x d_model
  Eigen::MatrixXd down;  // d_model x d_p
};

struct PrivateInit {
  std::vector<PrivateBranch> branches;  // plan group order
  std::vector<std::string> warnings;
};

/// Residual magnitude below which a group's share counts as empty.
inline constexpr double kResidualFloor = 1e-12;

inline PrivateInit private_init(const Eigen::MatrixXd& w_res, const DecompositionPlan& plan) {
  const int n = plan.groups();
  if (static_cast<int>(plan.p_g.size()) != n) throw validation_error("decomposer.private", "p_g length mismatch");
  const int t = plan.private_rank;
  if (t < 1) throw validation_error("decomposer.private", "private rank < 1; plan too small");
  if (t > plan.d_p || t > std::min(w_res.rows(), w_res.cols()))
    throw validation_error("decomposer.private", "private rank " + std::to_string(t) + " exceeds branch width or rank bound");
  PrivateInit out;
  for (int g = 0; g < n; ++g) {
    std::mt19937_64 rng(derive_seed(plan.seed, static_cast<std::uint64_t>(g) + 1));
    const Eigen::MatrixXd weighted = plan.p_g[static_cast<std::size_t>(g)] * w_res;
    PrivateBranch b;
    Eigen::MatrixXd left, right;
    if (weighted.norm() <= kResidualFloor) {
      out.warnings.push_back("group " + std::to_string(g) + ": residual is zero; private branch is noise-only");
      left = gaussian_matrix(w_res.rows(), plan.d_p, rng, plan.private_noise_scale);
      right = gaussian_matrix(plan.d_p, w_res.cols(), rng, plan.private_noise_scale);
    } else {
      detail::padded_factors(svd(weighted), t, plan.d_p, plan.private_noise_scale, rng, left, right);
    }
    b.down = std::move(left);
    b.up = std::move(right);
    out.branches.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SpecializedFfn {
  Eigen::MatrixXd shared_up;    // d_s x d_model
  Eigen::MatrixXd shared_down;  // d_model x d_s
  std::vector<PrivateBranch> privates;
  std::vector<std::string> group_names;
  std::map<std::string, int> routing;  // task -> group index
  Activation activation = Activation::silu;

  Eigen::Index d_model() const { return shared_up.cols(); }

  int group_of(const std::string& task) const {
    auto it = routing.find(task);
    if (it == routing.end()) throw validation_error("decomposer.route", "task '" + task + "' has no routing entry");
    return it->second;
  }

  void validate() const {
    const Eigen::Index dm = shared_up.cols();
    if (shared_down.rows() != dm || shared_down.cols() != shared_up.rows())
      throw validation_error("decomposer.ffn", "shared branch shapes disagree");
    for (const auto& p : privates)
      if (p.up.cols() != dm || p.down.rows() != dm || p.down.cols() != p.up.rows())
        throw validation_error("decomposer.ffn", "private branch shapes disagree");
    for (const auto& [task, g] : routing)
      if (g < 0 || g >= static_cast<int>(privates.size()))
        throw validation_error("decomposer.ffn", "task '" + task + "' routes to missing group");
  }
};

struct AssembleDiagnostics {
  Eigen::VectorXd sigma;
  double equiv_norm = 0.0;
  double residual_norm = 0.0;
  double tail_energy_norm = 0.0;  // sqrt(sum_{j>r} sigma_j^2)
  std::vector<std::string> warnings;
};

inline SpecializedFfn assemble(const UnifiedFfnWeights& w, const DecompositionPlan& plan,
                               AssembleDiagnostics* diag = nullptr) {
  w.validate();
  plan.validate();
  if (w.d_model() != plan.d_model || w.d_ff() != plan.d_ff)
    throw analysis_error("decomposer.assemble", "weights are d_model=" + std::to_string(w.d_model()) +
                                                    ", d_ff=" + std::to_string(w.d_ff()) + " but plan expects d_model=" +
                                                    std::to_string(plan.d_model) + ", d_ff=" + std::to_string(plan.d_ff));
  const Eigen::MatrixXd we = equiv_weight(w);
  const SharedFactors sf = shared_factors(we, plan);
  const Eigen::MatrixXd res = residual(we, sf.w_shared_equiv);
  PrivateInit pi = private_init(res, plan);

  SpecializedFfn ffn;
  ffn.shared_up = sf.w2_factor;
  ffn.shared_down = sf.w1_factor;
  ffn.privates = std::move(pi.branches);
  ffn.activation = plan.activation;
  for (int g = 0; g < plan.groups(); ++g) {
    ffn.group_names.push_back("group" + std::to_string(g));
    for (const auto& t : plan.grouping.groups[static_cast<std::size_t>(g)]) ffn.routing[t] = g;
  }
  if (diag) {
    diag->sigma = sf.sigma;
    diag->equiv_norm = we.norm();
    diag->residual_norm = res.norm();
    diag->tail_energy_norm = std::sqrt(sf.sigma.tail(sf.sigma.size() - plan.r).squaredNorm());
    diag->warnings = pi.warnings;
  }
  return ffn;
}

/// Routed forward pass for a batch of rows x (batch x d_model).
inline Eigen::MatrixXd forward(const SpecializedFfn& ffn, const Eigen::MatrixXd& x, const std::string& task) {
  if (x.cols() != ffn.d_model())
    throw validation_error("decomposer.forward", "input width " + std::to_string(x.cols()) + " != d_model " +
                                                     std::to_string(ffn.d_model()));
  const PrivateBranch& p = ffn.privates[static_cast<std::size_t>(ffn.group_of(task))];
  const Eigen::MatrixXd hs = activate(ffn.activation, x * ffn.shared_up.transpose());
  const Eigen::MatrixXd hp = activate(ffn.activation, x * p.up.transpose());
  return hs * ffn.shared_down.transpose() + hp * p.down.transpose();
}

}  // namespace gdps

#endif
