#ifndef GDPS_CONFLICT_HPP
#define GDPS_CONFLICT_HPP

// Sample-level gradient agreement within and across tasks, the conflict
// scalar delta = S_self - S_cross, and the piecewise shared-ratio rule.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gdps/densela.hpp"
#include "gdps/gradbundle.hpp"

namespace gdps {

struct RatioThresholds {
  double low = 0.05;
  double high = 0.15;
  double ratios[3] = {0.75, 0.50, 0.25};

  void validate() const {
    if (!(0 < low && low < high))
      throw validation_error("conflict.thresholds", "need 0 < low < high, got " + std::to_string(low) + ", " +
                                                        std::to_string(high));
    for (double r : ratios)
      if (!(r > 0 && r < 1)) throw validation_error("conflict.thresholds", "ratios must lie in (0, 1)");
    if (!(ratios[0] > ratios[1] && ratios[1] > ratios[2]))
      throw validation_error("conflict.thresholds", "ratios must be strictly decreasing");
  }
};

struct RatioDecision {
  double ratio = 0.0;
  int branch = 0;  // 0: delta < low, 1: low <= delta < high, 2: delta >= high
};

inline RatioDecision decide_shared_ratio(double delta, const RatioThresholds& th = {}) {
  if (!std::isfinite(delta)) throw analysis_error("conflict.ratio", "delta is not finite");
  if (delta < th.low) return {th.ratios[0], 0};
  if (delta < th.high) return {th.ratios[1], 1};
  return {th.ratios[2], 2};
}

inline double map_shared_ratio(double delta, const RatioThresholds& th = {}) {
  return decide_shared_ratio(delta, th).ratio;
}

inline std::string describe_branch(const RatioThresholds& th, int branch) {
  switch (branch) {
    case 0: return "delta < " + std::to_string(th.low);
    case 1: return std::to_string(th.low) + " <= delta < " + std::to_string(th.high);
    default: return "delta >= " + std::to_string(th.high);
  }
}

struct SimilarityStats {
  double mean = 0.0;
  long long pairs = 0;       // pairs contributing to the mean
  long long degenerate = 0;  // pairs skipped because a row had zero norm
  long long nonnegative = 0; // contributing pairs with cosine >= 0
};

struct ConflictOptions {
  int max_samples = 512;  // per task; larger matrices are subsampled uniformly
  std::uint64_t seed = kDefaultSeed;
  double degenerate_warning_fraction = 0.10;
};

namespace detail {

/// Rows normalized to unit length, with per-row degenerate flags and content
/// hashes (used to return exactly 1 for identical rows).
struct UnitRows {
  Eigen::MatrixXd unit;  // rows x d
  std::vector<char> degenerate;
  std::vector<std::uint64_t> hash;
  const RowMatrix* raw = nullptr;
  std::vector<Eigen::Index> index;  // rows of *raw in use
};

inline UnitRows unit_rows(const RowMatrix& g, const std::string& task, const std::string& layer,
                          const ConflictOptions& opt) {
  UnitRows u;
  u.raw = &g;
  u.index.resize(static_cast<std::size_t>(g.rows()));
  std::iota(u.index.begin(), u.index.end(), Eigen::Index{0});
  if (opt.max_samples > 0 && g.rows() > opt.max_samples) {
    std::mt19937_64 rng(derive_seed(opt.seed, fnv1a(task + "\x1f" + layer)));
    for (Eigen::Index i = 0; i < opt.max_samples; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, g.rows() - 1);
      std::swap(u.index[static_cast<std::size_t>(i)], u.index[static_cast<std::size_t>(pick(rng))]);
    }
    u.index.resize(static_cast<std::size_t>(opt.max_samples));
    std::sort(u.index.begin(), u.index.end());
  }
  const auto m = static_cast<Eigen::Index>(u.index.size());
  u.unit.resize(m, g.cols());
  u.degenerate.assign(static_cast<std::size_t>(m), 0);
  u.hash.assign(static_cast<std::size_t>(m), 0);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index src = u.index[static_cast<std::size_t>(r)];
    const double n = g.row(src).norm();
    if (n < kZeroNorm) {
      u.degenerate[static_cast<std::size_t>(r)] = 1;
      u.unit.row(r).setZero();
    } else {
      u.unit.row(r) = g.row(src) / n;
    }
    Fnv1a h;
    h.update(g.row(src).data(), sizeof(double) * static_cast<std::size_t>(g.cols()));
    u.hash[static_cast<std::size_t>(r)] = h.digest();
  }
  return u;
}

inline bool identical_rows(const UnitRows& a, Eigen::Index i, const UnitRows& b, Eigen::Index j) {
  if (a.hash[static_cast<std::size_t>(i)] != b.hash[static_cast<std::size_t>(j)]) return false;
  return a.raw->row(a.index[static_cast<std::size_t>(i)]) == b.raw->row(b.index[static_cast<std::size_t>(j)]);
}

inline double pair_cosine(const UnitRows& a, Eigen::Index i, const UnitRows& b, Eigen::Index j, double dot) {
  if (identical_rows(a, i, b, j)) return 1.0;
  return std::clamp(dot, -1.0, 1.0);
}

inline SimilarityStats self_stats(const UnitRows& u) {
  SimilarityStats s;
  const Eigen::Index m = u.unit.rows();
  const Eigen::MatrixXd gram = u.unit * u.unit.transpose();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      if (u.degenerate[static_cast<std::size_t>(i)] || u.degenerate[static_cast<std::size_t>(j)]) {
        ++s.degenerate;
        continue;
      }
      const double c = pair_cosine(u, i, u, j, gram(i, j));
      sum += c;
      ++s.pairs;
      if (c >= 0) ++s.nonnegative;
    }
  }
  s.mean = s.pairs > 0 ? sum / static_cast<double>(s.pairs) : 0.0;
  return s;
}

inline SimilarityStats cross_stats(const UnitRows& a, const UnitRows& b) {
  SimilarityStats s;
  const Eigen::MatrixXd gram = a.unit * b.unit.transpose();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.unit.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.unit.rows(); ++j) {
      if (a.degenerate[static_cast<std::size_t>(i)] || b.degenerate[static_cast<std::size_t>(j)]) {
        ++s.degenerate;
        continue;
      }
      const double c = pair_cosine(a, i, b, j, gram(i, j));
      sum += c;
      ++s.pairs;
      if (c >= 0) ++s.nonnegative;
    }
  }
  s.mean = s.pairs > 0 ? sum / static_cast<double>(s.pairs) : 0.0;
  return s;
}

}  // namespace detail

/// Mean cosine over unordered pairs i != j of one task's sample gradients.
inline SimilarityStats self_similarity(const GradientBundle& bundle, const std::string& task, const std::string& layer,
                                       const ConflictOptions& opt = {}) {
  const RowMatrix& g = sample_gradients(bundle, task, layer);
  if (g.rows() < 2)
    throw validation_error("conflict.self", "(" + task + ", " + layer + ") needs at least 2 samples, has " +
                                                std::to_string(g.rows()));
  return detail::self_stats(detail::unit_rows(g, task, layer, opt));
}

/// Mean cosine over the full cross product of two tasks' sample gradients.
inline SimilarityStats cross_similarity(const GradientBundle& bundle, const std::string& task_a,
                                        const std::string& task_b, const std::string& layer,
                                        const ConflictOptions& opt = {}) {
  const RowMatrix& a = sample_gradients(bundle, task_a, layer);
  const RowMatrix& b = sample_gradients(bundle, task_b, layer);
  return detail::cross_stats(detail::unit_rows(a, task_a, layer, opt), detail::unit_rows(b, task_b, layer, opt));
}

struct LayerConflict {
  std::string layer;
  double s_self = 0.0;
  double s_cross = 0.0;
  double delta = 0.0;
  double purity = 1.0;  // fraction of cross-task sample pairs with cosine >= 0
  long long degenerate_pairs = 0;
  long long total_pairs = 0;
  std::vector<double> per_task_self;
  std::vector<std::string> warnings;
};

inline LayerConflict layer_conflict(const GradientBundle& bundle, const std::string& layer,
                                    const ConflictOptions& opt = {}) {
  const auto& tasks = bundle.tasks();
  if (tasks.size() < 2) throw validation_error("conflict.layer", ">= 2 tasks required");
  if (!bundle.has_layer(layer)) throw validation_error("conflict.layer", "unknown layer '" + layer + "'");
  for (const auto& t : tasks) {
    if (sample_gradients(bundle, t, layer).rows() < 2)
      throw validation_error("conflict.layer", "(" + t + ", " + layer + ") needs at least 2 samples");
  }
  const std::size_t n = tasks.size();
  std::vector<detail::UnitRows> units(n);
  parallel_for(n, [&](std::size_t i) {
    units[i] = detail::unit_rows(sample_gradients(bundle, tasks[i], layer), tasks[i], layer, opt);
  });
  std::vector<SimilarityStats> self(n);
  parallel_for(n, [&](std::size_t i) { self[i] = detail::self_stats(units[i]); });
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<SimilarityStats> cross(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t p) {
    cross[p] = detail::cross_stats(units[pairs[p].first], units[pairs[p].second]);
  });

  LayerConflict lc;
  lc.layer = layer;
  double self_sum = 0.0;
  for (const auto& s : self) {
    self_sum += s.mean;
    lc.per_task_self.push_back(s.mean);
    lc.degenerate_pairs += s.degenerate;
    lc.total_pairs += s.degenerate + s.pairs;
  }
  double cross_sum = 0.0;
  long long cross_valid = 0, cross_nonneg = 0;
  for (const auto& s : cross) {
    cross_sum += s.mean;
    cross_valid += s.pairs;
    cross_nonneg += s.nonnegative;
    lc.degenerate_pairs += s.degenerate;
    lc.total_pairs += s.degenerate + s.pairs;
  }
  lc.s_self = self_sum / static_cast<double>(n);
  lc.s_cross = cross_sum / static_cast<double>(cross.size());
  lc.delta = lc.s_self - lc.s_cross;
  lc.purity = cross_valid > 0 ? static_cast<double>(cross_nonneg) / static_cast<double>(cross_valid) : 1.0;
  if (lc.total_pairs > 0 &&
      static_cast<double>(lc.degenerate_pairs) > opt.degenerate_warning_fraction * static_cast<double>(lc.total_pairs))
    lc.warnings.push_back("data quality: " + std::to_string(lc.degenerate_pairs) + " of " +
                          std::to_string(lc.total_pairs) + " sample pairs at layer '" + layer +
                          "' involve zero-norm gradients");
  return lc;
}

/// Mean per-layer delta over the candidate layers.
inline double aggregate_delta(const std::vector<LayerConflict>& reports, const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw validation_error("conflict.aggregate", "empty candidate layer set");
  double sum = 0.0;
  for (const auto& c : candidates) {
    auto it = std::find_if(reports.begin(), reports.end(), [&](const LayerConflict& r) { return r.layer == c; });
    if (it == reports.end()) throw validation_error("conflict.aggregate", "no conflict report for layer '" + c + "'");
    sum += it->delta;
  }
  return sum / static_cast<double>(candidates.size());
}

struct RankedLayer {
  double score = 0.0;  // bottleneck score = delta
  LayerConflict conflict;
};

/// Sort by delta descending, then lower purity, then layer id.
inline std::vector<RankedLayer> rank_conflicts(std::vector<LayerConflict> conflicts) {
  std::vector<RankedLayer> out;
  for (auto& c : conflicts) out.push_back({c.delta, std::move(c)});
  std::stable_sort(out.begin(), out.end(), [](const RankedLayer& a, const RankedLayer& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.conflict.purity != b.conflict.purity) return a.conflict.purity < b.conflict.purity;
    return a.conflict.layer < b.conflict.layer;
  });
  return out;
}

inline std::vector<RankedLayer> rank_layers(const GradientBundle& bundle, const std::vector<std::string>& layers,
                                            const ConflictOptions& opt = {}) {
  if (layers.empty()) throw validation_error("conflict.rank", "no layers to rank");
  std::vector<LayerConflict> conflicts;
  for (const auto& l : layers) conflicts.push_back(layer_conflict(bundle, l, opt));
  return rank_conflicts(std::move(conflicts));
}

struct ConflictReport {
  std::vector<LayerConflict> layers;
  std::vector<std::string> candidates;
  double delta = 0.0;
  double shared_ratio = 0.0;
  int branch = 0;
  RatioThresholds thresholds;
  std::vector<std::string> warnings;
};

inline ConflictReport conflict_report(const GradientBundle& bundle, const std::vector<std::string>& candidates,
                                      const RatioThresholds& thresholds = {}, const ConflictOptions& opt = {}) {
  thresholds.validate();
  ConflictReport r;
  r.candidates = candidates;
  r.thresholds = thresholds;
  for (const auto& l : candidates) {
    r.layers.push_back(layer_conflict(bundle, l, opt));
    for (const auto& w : r.layers.back().warnings) r.warnings.push_back(w);
  }
  r.delta = aggregate_delta(r.layers, candidates);
  const RatioDecision d = decide_shared_ratio(r.delta, thresholds);
  r.shared_ratio = d.ratio;
  r.branch = d.branch;
  return r;
}

}  // namespace gdps

#endif
