#ifndef GDPS_GROUPING_HPP
#define GDPS_GROUPING_HPP

// Task grouping from averaged gradients: cosine similarity matrix, distance
// d = 1 - s, k-means over distance profiles, single-linkage agglomeration, and
// a consensus of the two.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gdps/densela.hpp"
#include "gdps/gradbundle.hpp"

namespace gdps {

struct SimilarityMatrix {
  std::vector<std::string> tasks;
  Eigen::MatrixXd s;
  int degenerate = 0;  // task pairs with a zero mean gradient
};

struct DistanceMatrix {
  std::vector<std::string> tasks;
  Eigen::MatrixXd d;
};

enum class GroupingMethod { kmeans, hierarchical, consensus };

inline const char* to_string(GroupingMethod m) {
  switch (m) {
    case GroupingMethod::kmeans: return "kmeans";
    case GroupingMethod::hierarchical: return "hierarchical";
    case GroupingMethod::consensus: return "consensus";
  }
  return "?";
}

inline GroupingMethod grouping_method_from_string(const std::string& s) {
  if (s == "kmeans") return GroupingMethod::kmeans;
  if (s == "hierarchical") return GroupingMethod::hierarchical;
  if (s == "consensus") return GroupingMethod::consensus;
  throw validation_error("grouping.parse", "unknown grouping method '" + s + "'");
}

/// A partition of tasks. Canonical form: members sorted within each group;
/// groups ordered by size, then by smallest member.
struct GroupingPlan {
  GroupingMethod method = GroupingMethod::hierarchical;
  std::vector<std::vector<std::string>> groups;

  int k() const { return static_cast<int>(groups.size()); }

  void canonicalize() {
    for (auto& g : groups) std::sort(g.begin(), g.end());
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
      if (a.size() != b.size()) return a.size() < b.size();
      return a.front() < b.front();
    });
  }

  /// Index of the group holding `task`, or -1.
  int group_of(const std::string& task) const {
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (std::find(groups[g].begin(), groups[g].end(), task) != groups[g].end()) return static_cast<int>(g);
    return -1;
  }

  std::vector<std::string> tasks() const {
    std::vector<std::string> out;
    for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
    return out;
  }

  /// Same partition, ignoring method tag and group order.
  bool same_partition(const GroupingPlan& other) const {
    GroupingPlan a = *this, b = other;
    a.canonicalize();
    b.canonicalize();
    return a.groups == b.groups;
  }
};

/// Throws unless `plan` is an exact partition of `tasks` with no empty group.
inline void validate_partition(const GroupingPlan& plan, const std::vector<std::string>& tasks) {
  if (plan.groups.empty()) throw validation_error("grouping.validate", "grouping has no groups");
  std::map<std::string, int> count;
  for (const auto& g : plan.groups) {
    if (g.empty()) throw validation_error("grouping.validate", "grouping has an empty group");
    for (const auto& t : g) ++count[t];
  }
  for (const auto& t : tasks) {
    auto it = count.find(t);
    if (it == count.end()) throw validation_error("grouping.validate", "task '" + t + "' is not in any group");
    if (it->second != 1) throw validation_error("grouping.validate", "task '" + t + "' appears in several groups");
  }
  if (count.size() != tasks.size()) {
    for (const auto& [t, _] : count)
      if (std::find(tasks.begin(), tasks.end(), t) == tasks.end())
        throw validation_error("grouping.validate", "grouping names unknown task '" + t + "'");
  }
}

inline GroupingPlan plan_from_labels(const std::vector<std::string>& tasks, const std::vector<int>& labels,
                                     GroupingMethod method) {
  std::map<int, std::vector<std::string>> by_label;
  for (std::size_t i = 0; i < tasks.size(); ++i) by_label[labels[i]].push_back(tasks[i]);
  GroupingPlan plan;
  plan.method = method;
  for (auto& [_, members] : by_label) plan.groups.push_back(std::move(members));
  plan.canonicalize();
  return plan;
}

// ---------------------------------------------------------------------------

inline SimilarityMatrix similarity_matrix(const GradientBundle& bundle, const std::string& layer) {
  if (!bundle.has_layer(layer)) throw validation_error("grouping.similarity", "unknown layer '" + layer + "'");
  const auto& tasks = bundle.tasks();
  const auto n = static_cast<Eigen::Index>(tasks.size());
  std::vector<Eigen::VectorXd> means;
  means.reserve(tasks.size());
  for (const auto& t : tasks) means.push_back(mean_gradient(bundle, t, layer));
  SimilarityMatrix sim{tasks, Eigen::MatrixXd::Identity(n, n), 0};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Cosine c = cosine(means[static_cast<std::size_t>(i)], means[static_cast<std::size_t>(j)]);
      if (c.degenerate) ++sim.degenerate;
      sim.s(i, j) = sim.s(j, i) = c.value;
    }
  }
  return sim;
}

inline DistanceMatrix to_distance(const SimilarityMatrix& sim) {
  DistanceMatrix dist{sim.tasks, (1.0 - sim.s.array()).matrix()};
  dist.d.diagonal().setZero();
  return dist;
}

// ---------------------------------------------------------------------------
// k-means

struct KmeansState {
  Eigen::MatrixXd centroids;        // k x dim
  std::vector<int> assignments;     // per point
  double inertia = 0.0;             // summed squared distance to assigned centroid
  int iterations = 0;
  std::vector<double> inertia_history;
};

struct KmeansOptions {
  int restarts = 10;
  int max_iterations = 100;
};

namespace detail {

inline double squared_distance(const Eigen::MatrixXd& points, Eigen::Index i, const Eigen::MatrixXd& centroids,
                               Eigen::Index c) {
  return (points.row(i) - centroids.row(c)).squaredNorm();
}

inline double assign_points(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::vector<int>& labels) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    int best = 0;
    double best_d = squared_distance(points, i, centroids, 0);
    for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
      const double d = squared_distance(points, i, centroids, c);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    inertia += best_d;
  }
  return inertia;
}

/// One seeded Lloyd run with k-means++ seeding.
inline KmeansState kmeans_single(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iterations) {
  const Eigen::Index n = points.rows();
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = points.row(pick(rng));
  std::vector<double> nearest(static_cast<std::size_t>(n));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int p = 0; p < c; ++p) best = std::min(best, squared_distance(points, i, centroids, p));
      nearest[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    Eigen::Index chosen = 0;
    if (total <= 0) {
      // All points coincide with existing centroids; take the first unused index.
      chosen = std::min<Eigen::Index>(c, n - 1);
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= nearest[static_cast<std::size_t>(i)];
        if (r < 0) {
          chosen = i;
          break;
        }
      }
    }
    centroids.row(c) = points.row(chosen);
  }

  KmeansState st;
  st.assignments.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < max_iterations; ++it) {
    const double inertia = assign_points(points, centroids, labels);
    st.inertia_history.push_back(inertia);
    st.iterations = it + 1;
    const bool changed = labels != st.assignments;
    st.assignments = labels;
    st.inertia = inertia;
    if (!changed) break;
    // Update step; an emptied cluster takes the point farthest from its centroid.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int li = labels[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(li)] <= 1) continue;
        const double d = squared_distance(points, i, centroids, li);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
      labels[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      centroids.row(c) = points.row(far);
    }
  }
  // Final consistent state: centroids are the means of the final assignment.
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    sums.row(st.assignments[static_cast<std::size_t>(i)]) += points.row(i);
    ++counts[static_cast<std::size_t>(st.assignments[static_cast<std::size_t>(i)])];
  }
  for (int c = 0; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0) centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
  st.centroids = centroids;
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) inertia += squared_distance(points, i, centroids, st.assignments[static_cast<std::size_t>(i)]);
  st.inertia = std::min(st.inertia, inertia);
  return st;
}

}  // namespace detail

/// Lloyd's k-means on the rows of `points`; best of `restarts` seeded runs by
/// inertia (earliest restart wins ties).
inline KmeansState kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, const KmeansOptions& opt = {}) {
  if (k <= 0) throw validation_error("grouping.kmeans", "k must be positive");
  if (k > points.rows())
    throw validation_error("grouping.kmeans", "k=" + std::to_string(k) + " exceeds point count " +
                                                  std::to_string(points.rows()));
  if (!points.allFinite()) throw validation_error("grouping.kmeans", "non-finite feature vector");
  const int restarts = std::max(1, opt.restarts);
  std::vector<KmeansState> runs(static_cast<std::size_t>(restarts));
  parallel_for(runs.size(), [&](std::size_t r) {
    runs[r] = detail::kmeans_single(points, k, derive_seed(seed, r), opt.max_iterations);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  return runs[best];
}

// ---------------------------------------------------------------------------
// Single linkage

struct Merge {
  std::vector<std::string> left;
  std::vector<std::string> right;
  double distance = 0.0;
};

/// Full single-linkage dendrogram as a merge list (n-1 merges). Ties on the
/// merge distance go to the lexicographically smallest pair of cluster keys,
/// where a cluster's key is its smallest task identifier.
inline std::vector<Merge> single_linkage_merges(const DistanceMatrix& dist) {
  const auto n = dist.tasks.size();
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  auto key = [&](const std::vector<std::size_t>& c) {
    std::string best = dist.tasks[c.front()];
    for (auto i : c) best = std::min(best, dist.tasks[i]);
    return best;
  };
  std::vector<Merge> merges;
  while (clusters.size() > 1) {
    std::size_t ba = 0, bb = 1;
    double bd = std::numeric_limits<double>::infinity();
    std::pair<std::string, std::string> bkey;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double d = std::numeric_limits<double>::infinity();
        for (auto i : clusters[a])
          for (auto j : clusters[b]) d = std::min(d, dist.d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        auto ka = key(clusters[a]), kb = key(clusters[b]);
        if (kb < ka) std::swap(ka, kb);
        std::pair<std::string, std::string> k{ka, kb};
        if (d < bd || (d == bd && k < bkey)) {
          bd = d;
          ba = a;
          bb = b;
          bkey = std::move(k);
        }
      }
    }
    Merge m;
    for (auto i : clusters[ba]) m.left.push_back(dist.tasks[i]);
    for (auto i : clusters[bb]) m.right.push_back(dist.tasks[i]);
    std::sort(m.left.begin(), m.left.end());
    std::sort(m.right.begin(), m.right.end());
    if (m.right.front() < m.left.front()) std::swap(m.left, m.right);
    m.distance = bd;
    merges.push_back(std::move(m));
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  return merges;
}

/// Agglomerates until `k` clusters remain.
inline GroupingPlan single_linkage(const DistanceMatrix& dist, int k) {
  const int n = static_cast<int>(dist.tasks.size());
  if (k < 1 || k > n)
    throw validation_error("grouping.linkage", "k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  const auto merges = single_linkage_merges(dist);
  std::map<std::string, int> label;
  for (int i = 0; i < n; ++i) label[dist.tasks[static_cast<std::size_t>(i)]] = i;
  for (int m = 0; m < n - k; ++m) {
    const int target = label[merges[static_cast<std::size_t>(m)].left.front()];
    const int source = label[merges[static_cast<std::size_t>(m)].right.front()];
    for (auto& [_, l] : label)
      if (l == source) l = target;
  }
  std::vector<int> labels;
  for (const auto& t : dist.tasks) labels.push_back(label[t]);
  return plan_from_labels(dist.tasks, labels, GroupingMethod::hierarchical);
}

// ---------------------------------------------------------------------------
// Consensus

struct GroupingResult {
  GroupingPlan plan;
  GroupingPlan kmeans_plan;
  GroupingPlan hierarchical_plan;
  double kmeans_inertia = 0.0;
  std::vector<Merge> merges;
  SimilarityMatrix similarity;
  DistanceMatrix distance;
  std::vector<std::string> warnings;
};

/// k-means over distance-matrix rows plus single linkage on the matrix; agreement
/// yields a consensus plan, disagreement falls back to the hierarchical result.
inline GroupingResult consensus_from_distance(const DistanceMatrix& dist, int k, std::uint64_t seed) {
  const int n = static_cast<int>(dist.tasks.size());
  if (k < 1 || k > n)
    throw validation_error("grouping.consensus", "k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  GroupingResult r;
  r.distance = dist;
  r.merges = single_linkage_merges(dist);
  r.hierarchical_plan = single_linkage(dist, k);
  const KmeansState km = kmeans(dist.d, k, seed);
  r.kmeans_inertia = km.inertia;
  r.kmeans_plan = plan_from_labels(dist.tasks, km.assignments, GroupingMethod::kmeans);
  if (r.kmeans_plan.same_partition(r.hierarchical_plan)) {
    r.plan = r.hierarchical_plan;
    r.plan.method = GroupingMethod::consensus;
  } else {
    r.plan = r.hierarchical_plan;
    r.warnings.push_back("k-means and single-linkage partitions disagree; using the hierarchical partition");
  }
  return r;
}

inline GroupingResult consensus_group(const GradientBundle& bundle, const std::string& layer, int k,
                                      std::uint64_t seed) {
  SimilarityMatrix sim = similarity_matrix(bundle, layer);
  GroupingResult r = consensus_from_distance(to_distance(sim), k, seed);
  if (sim.degenerate > 0)
    r.warnings.push_back(std::to_string(sim.degenerate) + " task pair(s) involve a zero mean gradient");
  r.similarity = std::move(sim);
  return r;
}

}  // namespace gdps

#endif
