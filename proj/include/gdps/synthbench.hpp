#ifndef GDPS_SYNTHBENCH_HPP
#define GDPS_SYNTHBENCH_HPP

// Desk-scale multi-task regression with planted conflict structure.
//
// Each task t has a linear target map A_t (d_out x d_in). Group maps sit at a
// common pairwise angle theta (Frobenius inner product); tasks in a group are
// small rotations of their group map. The toy model is
//
//   z = T x          (fixed trunk)
//   u = W2 act(W1 z) (probe block: the feed-forward block under study)
//   y_hat = H u      (fixed head)
//
// with per-sample loss ||y_hat - y||^2 / 2.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "gdps/conflict.hpp"
#include "gdps/decomposer.hpp"
#include "gdps/gradbundle.hpp"
#include "gdps/grouping.hpp"

namespace gdps {

inline constexpr const char* kProbeLayer = "ffn2";
inline constexpr const char* kProbeUpLayer = "ffn2.up";
inline constexpr const char* kProbeDownLayer = "ffn2.down";

struct SuiteConfig {
  std::vector<int> group_sizes = {1, 3};  // planted partition; tasks are numbered in group order
  double theta_deg = 80.0;                // pairwise angle between group target maps
  double spread_deg = 5.0;                // bound on within-group pairwise angles
  int d_in = 16;
  int d_out = 16;
  double noise = 0.3;  // target noise std
  std::uint64_t seed = kDefaultSeed;

  int n_tasks() const {
    int n = 0;
    for (int s : group_sizes) n += s;
    return n;
  }
};

struct SyntheticSuite {
  SuiteConfig config;
  std::vector<std::string> tasks;
  GroupingPlan planted;
  std::vector<Eigen::MatrixXd> targets;  // per task, d_out x d_in
};

inline std::string synthetic_task_name(int i) { return "t" + std::to_string(i); }

/// Angle in degrees between two maps under the Frobenius inner product.
inline double map_angle_deg(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double c = std::clamp(a.cwiseProduct(b).sum() / (a.norm() * b.norm()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

inline SyntheticSuite make_suite(const SuiteConfig& cfg) {
  if (cfg.group_sizes.empty()) throw validation_error("synth.suite", "no groups");
  for (int s : cfg.group_sizes)
    if (s < 1) throw validation_error("synth.suite", "empty planted group");
  if (!(cfg.theta_deg >= 0 && cfg.theta_deg <= 90)) throw validation_error("synth.suite", "theta must lie in [0, 90] degrees");
  if (!(cfg.spread_deg >= 0 && cfg.spread_deg < 90)) throw validation_error("synth.suite", "spread must lie in [0, 90) degrees");
  if (cfg.d_in < 1 || cfg.d_out < 1) throw validation_error("synth.suite", "degenerate dimensions");
  if (!(cfg.noise >= 0)) throw validation_error("synth.suite", "noise must be >= 0");
  const int n_groups = static_cast<int>(cfg.group_sizes.size());
  const int n_tasks = cfg.n_tasks();
  const int basis_size = 1 + n_groups + n_tasks;
  const int dim = cfg.d_in * cfg.d_out;
  if (basis_size > dim)
    throw validation_error("synth.suite", "d_in*d_out=" + std::to_string(dim) + " too small for " +
                                              std::to_string(n_tasks) + " tasks");

  // Orthonormal basis of maps (vectorized), via QR of a Gaussian block.
  std::mt19937_64 rng(derive_seed(cfg.seed, 11));
  const Eigen::MatrixXd raw = gaussian_matrix(dim, basis_size, rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, basis_size);
  auto basis = [&](int i) {
    Eigen::MatrixXd m(cfg.d_out, cfg.d_in);
    for (int r = 0; r < cfg.d_out; ++r)
      for (int c = 0; c < cfg.d_in; ++c) m(r, c) = q(r * cfg.d_in + c, i);
    return m;
  };

  const double cos_theta = std::cos(cfg.theta_deg * std::numbers::pi / 180.0);
  const double a = std::sqrt(std::max(cos_theta, 0.0));
  const double b = std::sqrt(std::max(1.0 - cos_theta, 0.0));
  const double phi = 0.5 * cfg.spread_deg * std::numbers::pi / 180.0;
  const double scale = std::sqrt(static_cast<double>(cfg.d_out));

  SyntheticSuite suite;
  suite.config = cfg;
  suite.planted.method = GroupingMethod::hierarchical;
  const Eigen::MatrixXd common = basis(0);
  int task = 0;
  for (int g = 0; g < n_groups; ++g) {
    const Eigen::MatrixXd group_map = n_groups == 1 ? common : Eigen::MatrixXd(a * common + b * basis(1 + g));
    std::vector<std::string> members;
    for (int s = 0; s < cfg.group_sizes[static_cast<std::size_t>(g)]; ++s, ++task) {
      const Eigen::MatrixXd own = basis(1 + n_groups + task);
      suite.tasks.push_back(synthetic_task_name(task));
      members.push_back(suite.tasks.back());
      suite.targets.push_back(scale * (std::cos(phi) * group_map + std::sin(phi) * own));
    }
    suite.planted.groups.push_back(members);
  }
  suite.planted.canonicalize();
  return suite;
}

// ---------------------------------------------------------------------------
// Toy model

struct ToyModel {
  Eigen::MatrixXd trunk;  // d_model x d_in
  UnifiedFfnWeights probe;
  Eigen::MatrixXd head;   // d_out x d_model
  Activation activation = Activation::identity;

  int d_model() const { return static_cast<int>(probe.w1.cols()); }
  int d_ff() const { return static_cast<int>(probe.w1.rows()); }
};

struct ModelConfig {
  int d_model = 16;
  int d_ff = 32;
  Activation activation = Activation::identity;
  double init_scale = 1.0;
  std::uint64_t seed = kDefaultSeed;
};

inline Eigen::MatrixXd random_orthogonal(int rows, int cols, std::mt19937_64& rng) {
  const int n = std::max(rows, cols);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(n, n, rng));
  const Eigen::MatrixXd q = qr.householderQ();
  return q.topLeftCorner(rows, cols);
}

inline ToyModel make_toy_model(const SyntheticSuite& suite, const ModelConfig& cfg) {
  if (cfg.d_model < 1 || cfg.d_ff < 1) throw validation_error("synth.model", "degenerate dimensions");
  std::mt19937_64 rng(derive_seed(cfg.seed, 21));
  ToyModel m;
  m.activation = cfg.activation;
  m.trunk = random_orthogonal(cfg.d_model, suite.config.d_in, rng) *
            std::sqrt(static_cast<double>(std::max(cfg.d_model, suite.config.d_in)) / suite.config.d_in);
  m.head = random_orthogonal(suite.config.d_out, cfg.d_model, rng);
  m.probe.w1 = gaussian_matrix(cfg.d_ff, cfg.d_model, rng, cfg.init_scale / std::sqrt(static_cast<double>(cfg.d_model)));
  m.probe.w2 = gaussian_matrix(cfg.d_model, cfg.d_ff, rng, cfg.init_scale / std::sqrt(static_cast<double>(cfg.d_ff)));
  return m;
}

/// Per-sample loss ||H W2 act(W1 T x) - y||^2 / 2.
inline double probe_loss(const ToyModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd z = m.trunk * x;
  const Eigen::VectorXd a = m.probe.w1 * z;
  const Eigen::VectorXd h = a.unaryExpr([&](double v) { return activate(m.activation, v); });
  const Eigen::VectorXd e = m.head * (m.probe.w2 * h) - y;
  return 0.5 * e.squaredNorm();
}

struct ProbeGradient {
  Eigen::MatrixXd w1;  // d_ff x d_model
  Eigen::MatrixXd w2;  // d_model x d_ff
  double loss = 0.0;
};

/// Closed-form backpropagation of probe_loss to the probe block weights.
inline ProbeGradient probe_gradient(const ToyModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd z = m.trunk * x;
  const Eigen::VectorXd a = m.probe.w1 * z;
  const Eigen::VectorXd h = a.unaryExpr([&](double v) { return activate(m.activation, v); });
  const Eigen::VectorXd e = m.head * (m.probe.w2 * h) - y;
  const Eigen::VectorXd gu = m.head.transpose() * e;
  const Eigen::VectorXd ga =
      (m.probe.w2.transpose() * gu).cwiseProduct(a.unaryExpr([&](double v) { return activate_derivative(m.activation, v); }));
  return {ga * z.transpose(), gu * h.transpose(), 0.5 * e.squaredNorm()};
}

/// Row-major flattening [W1 | W2], matching the "ffn2" bundle layer.
inline Eigen::VectorXd flatten_probe(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2) {
  Eigen::VectorXd out(w1.size() + w2.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < w1.rows(); ++i)
    for (Eigen::Index j = 0; j < w1.cols(); ++j) out(k++) = w1(i, j);
  for (Eigen::Index i = 0; i < w2.rows(); ++i)
    for (Eigen::Index j = 0; j < w2.cols(); ++j) out(k++) = w2(i, j);
  return out;
}

struct TaskSamples {
  Eigen::MatrixXd x;  // n x d_in
  Eigen::MatrixXd y;  // n x d_out
};

inline TaskSamples draw_samples(const SyntheticSuite& suite, int task, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TaskSamples s;
  s.x = gaussian_matrix(n, suite.config.d_in, rng);
  s.y = s.x * suite.targets[static_cast<std::size_t>(task)].transpose();
  if (suite.config.noise > 0) s.y += gaussian_matrix(n, suite.config.d_out, rng, suite.config.noise);
  return s;
}

inline int task_index(const SyntheticSuite& suite, const std::string& task) {
  const auto it = std::find(suite.tasks.begin(), suite.tasks.end(), task);
  if (it == suite.tasks.end()) throw validation_error("synth.task", "unknown task '" + task + "'");
  return static_cast<int>(it - suite.tasks.begin());
}

struct ProbeGradientRows {
  RowMatrix up;    // n x (d_ff*d_model)
  RowMatrix down;  // n x (d_model*d_ff)
};

inline ProbeGradientRows probe_gradient_rows(const ToyModel& model, const SyntheticSuite& suite, int task, int n_samples,
                                             std::uint64_t seed) {
  const TaskSamples s = draw_samples(suite, task, n_samples, seed);
  ProbeGradientRows rows;
  rows.up.resize(n_samples, model.probe.w1.size());
  rows.down.resize(n_samples, model.probe.w2.size());
  for (int i = 0; i < n_samples; ++i) {
    const ProbeGradient g = probe_gradient(model, s.x.row(i).transpose(), s.y.row(i).transpose());
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < g.w1.rows(); ++r)
      for (Eigen::Index c = 0; c < g.w1.cols(); ++c) rows.up(i, k++) = g.w1(r, c);
    k = 0;
    for (Eigen::Index r = 0; r < g.w2.rows(); ++r)
      for (Eigen::Index c = 0; c < g.w2.cols(); ++c) rows.down(i, k++) = g.w2(r, c);
  }
  return rows;
}

/// Per-sample probe-block gradients for one task ("ffn2" layer: [W1 | W2]).
inline GradientMatrix analytic_gradients(const ToyModel& model, const SyntheticSuite& suite, const std::string& task,
                                         int n_samples, std::uint64_t seed = kDefaultSeed) {
  if (n_samples < 1) throw validation_error("synth.gradients", "n_samples must be >= 1");
  const int t = task_index(suite, task);
  const ProbeGradientRows rows = probe_gradient_rows(model, suite, t, n_samples, derive_seed(seed, 100 + t));
  RowMatrix both(n_samples, rows.up.cols() + rows.down.cols());
  both << rows.up, rows.down;
  return GradientMatrix(task, kProbeLayer, both);
}

/// Bundle with layers "ffn2" (all probe weights), "ffn2.up" (W1), "ffn2.down" (W2).
inline GradientBundle collect_bundle(const ToyModel& model, const SyntheticSuite& suite, int n_samples,
                                     std::uint64_t seed = kDefaultSeed) {
  if (n_samples < 1) throw validation_error("synth.collect", "n_samples must be >= 1");
  const std::size_t n = suite.tasks.size();
  std::vector<ProbeGradientRows> rows(n);
  parallel_for(n, [&](std::size_t t) {
    rows[t] = probe_gradient_rows(model, suite, static_cast<int>(t), n_samples, derive_seed(seed, 100 + t));
  });
  std::vector<GradientMatrix> entries;
  for (std::size_t t = 0; t < n; ++t) {
    RowMatrix both(n_samples, rows[t].up.cols() + rows[t].down.cols());
    both << rows[t].up, rows[t].down;
    entries.emplace_back(suite.tasks[t], kProbeLayer, both);
    entries.emplace_back(suite.tasks[t], kProbeUpLayer, rows[t].up);
    entries.emplace_back(suite.tasks[t], kProbeDownLayer, rows[t].down);
  }
  std::vector<LayerSpec> layers = {{kProbeLayer, model.probe.w1.size() + model.probe.w2.size()},
                                   {kProbeUpLayer, model.probe.w1.size()},
                                   {kProbeDownLayer, model.probe.w2.size()}};
  return GradientBundle(suite.tasks, layers, std::move(entries));
}

// ---------------------------------------------------------------------------
// Training

enum class TrainMode { unified, specialized };

inline const char* to_string(TrainMode m) { return m == TrainMode::unified ? "unified" : "specialized"; }

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "unified") return TrainMode::unified;
  if (s == "specialized") return TrainMode::specialized;
  throw validation_error("synth.train", "unknown mode '" + s + "'");
}

struct TrainConfig {
  int steps = 500;
  double lr = 0.05;
  int batch = 32;            // samples per task per step
  int eval_samples = 256;    // fixed held-out set per task
  double private_lr_multiplier = 1.0;
  std::uint64_t seed = kDefaultSeed;
};

struct TrainLog {
  TrainMode mode = TrainMode::unified;
  std::uint64_t seed = 0;
  SuiteConfig suite;
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> losses;  // [step][task], held-out loss before the update
  std::vector<double> final_loss;           // per task, on the held-out set
  std::vector<double> cosine_before;        // per task, mean cosine to other tasks' gradients
  std::vector<double> cosine_after;
  int steps = 0;

  double mean_final_loss() const {
    double s = 0.0;
    for (double v : final_loss) s += v;
    return final_loss.empty() ? 0.0 : s / static_cast<double>(final_loss.size());
  }
};

namespace detail {

/// Trainable weights of either mode. Unified mode uses one branch and no
/// private branches; specialized mode adds one private branch per group.
struct BlockParams {
  Eigen::MatrixXd shared_up, shared_down;
  std::vector<Eigen::MatrixXd> private_up, private_down;
  std::vector<int> group_of_task;  // -1 in unified mode
};

struct BlockGrad {
  Eigen::MatrixXd shared_up, shared_down, private_up, private_down;
  double loss = 0.0;
};

/// Batch-mean loss and gradient for one task.
inline BlockGrad block_gradient(const ToyModel& m, const BlockParams& p, int task, const TaskSamples& s) {
  const Eigen::Index n = s.x.rows();
  const int g = p.group_of_task[static_cast<std::size_t>(task)];
  const Eigen::MatrixXd z = s.x * m.trunk.transpose();  // n x d_model
  const Eigen::MatrixXd as = z * p.shared_up.transpose();
  const Eigen::MatrixXd hs = activate(m.activation, as);
  Eigen::MatrixXd u = hs * p.shared_down.transpose();
  Eigen::MatrixXd ap, hp;
  if (g >= 0) {
    ap = z * p.private_up[static_cast<std::size_t>(g)].transpose();
    hp = activate(m.activation, ap);
    u += hp * p.private_down[static_cast<std::size_t>(g)].transpose();
  }
  const Eigen::MatrixXd e = u * m.head.transpose() - s.y;  // n x d_out
  const double scale = 1.0 / static_cast<double>(n);
  BlockGrad out;
  out.loss = 0.5 * e.squaredNorm() * scale;
  const Eigen::MatrixXd gu = e * m.head * scale;  // n x d_model
  auto deriv = [&](const Eigen::MatrixXd& a) { return a.unaryExpr([&](double v) { return activate_derivative(m.activation, v); }); };
  out.shared_down = gu.transpose() * hs;
  out.shared_up = ((gu * p.shared_down).cwiseProduct(deriv(as))).transpose() * z;
  if (g >= 0) {
    out.private_down = gu.transpose() * hp;
    out.private_up = ((gu * p.private_down[static_cast<std::size_t>(g)]).cwiseProduct(deriv(ap))).transpose() * z;
  }
  return out;
}

/// Held-out mean loss without the backward pass.
inline double block_loss(const ToyModel& m, const BlockParams& p, int task, const TaskSamples& s) {
  const int g = p.group_of_task[static_cast<std::size_t>(task)];
  const Eigen::MatrixXd z = s.x * m.trunk.transpose();
  Eigen::MatrixXd u = activate(m.activation, Eigen::MatrixXd(z * p.shared_up.transpose())) * p.shared_down.transpose();
  if (g >= 0)
    u += activate(m.activation, Eigen::MatrixXd(z * p.private_up[static_cast<std::size_t>(g)].transpose())) *
         p.private_down[static_cast<std::size_t>(g)].transpose();
  return 0.5 * (u * m.head.transpose() - s.y).squaredNorm() / static_cast<double>(s.x.rows());
}

inline Eigen::VectorXd flatten(std::initializer_list<const Eigen::MatrixXd*> parts) {
  Eigen::Index total = 0;
  for (auto* p : parts) total += p->size();
  Eigen::VectorXd v(total);
  Eigen::Index k = 0;
  for (auto* p : parts) {
    v.segment(k, p->size()) = Eigen::Map<const Eigen::VectorXd>(p->data(), p->size());
    k += p->size();
  }
  return v;
}

/// Per task: mean cosine between its held-out gradient on the shared
/// parameters and every other task's.
inline std::vector<double> cross_task_cosines(const ToyModel& m, const BlockParams& p,
                                              const std::vector<TaskSamples>& eval) {
  const std::size_t n = eval.size();
  std::vector<Eigen::VectorXd> grads(n);
  parallel_for(n, [&](std::size_t t) {
    const BlockGrad g = block_gradient(m, p, static_cast<int>(t), eval[t]);
    grads[t] = flatten({&g.shared_up, &g.shared_down});
  });
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  for (std::size_t t = 0; t < n; ++t) {
    double sum = 0.0;
    for (std::size_t o = 0; o < n; ++o)
      if (o != t) sum += cosine(grads[t], grads[o]).value;
    out[t] = sum / static_cast<double>(n - 1);
  }
  return out;
}

}  // namespace detail

/// Gradient descent on the probe block only. Unified mode forbids a plan;
/// specialized mode requires one and trains the decomposed block, updating the
/// shared branch with the mean of group gradients and each private branch with
/// its own group's gradient.
inline TrainLog train(const ToyModel& model, const SyntheticSuite& suite, TrainMode mode, const DecompositionPlan* plan,
                      const TrainConfig& cfg) {
  if (mode == TrainMode::unified && plan) throw validation_error("synth.train", "unified mode takes no plan");
  if (mode == TrainMode::specialized && !plan) throw validation_error("synth.train", "specialized mode requires a plan");
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.eval_samples < 1 || !(cfg.lr >= 0))
    throw validation_error("synth.train", "invalid training configuration");
  const std::size_t n = suite.tasks.size();

  detail::BlockParams p;
  p.group_of_task.assign(n, -1);
  std::vector<std::vector<int>> members;  // tasks per group
  if (mode == TrainMode::unified) {
    p.shared_up = model.probe.w1;
    p.shared_down = model.probe.w2;
  } else {
    if (plan->activation != model.activation)
      throw validation_error("synth.train", "plan activation differs from the model's");
    const SpecializedFfn ffn = assemble(model.probe, *plan);
    p.shared_up = ffn.shared_up;
    p.shared_down = ffn.shared_down;
    for (const auto& b : ffn.privates) {
      p.private_up.push_back(b.up);
      p.private_down.push_back(b.down);
    }
    members.resize(ffn.privates.size());
    for (std::size_t t = 0; t < n; ++t) {
      p.group_of_task[t] = ffn.group_of(suite.tasks[t]);
      members[static_cast<std::size_t>(p.group_of_task[t])].push_back(static_cast<int>(t));
    }
  }

  std::vector<TaskSamples> eval(n);
  for (std::size_t t = 0; t < n; ++t)
    eval[t] = draw_samples(suite, static_cast<int>(t), cfg.eval_samples, derive_seed(derive_seed(cfg.seed, 2), t));

  TrainLog log;
  log.mode = mode;
  log.seed = cfg.seed;
  log.suite = suite.config;
  log.tasks = suite.tasks;
  log.steps = cfg.steps;
  log.cosine_before = detail::cross_task_cosines(model, p, eval);

  std::vector<detail::BlockGrad> grads(n);
  for (int step = 0; step < cfg.steps; ++step) {
    parallel_for(n, [&](std::size_t t) {
      const TaskSamples batch =
          draw_samples(suite, static_cast<int>(t), cfg.batch, derive_seed(derive_seed(cfg.seed, 1), static_cast<std::uint64_t>(step) * n + t));
      grads[t] = detail::block_gradient(model, p, static_cast<int>(t), batch);
    });
    std::vector<double> losses(n);
    parallel_for(n, [&](std::size_t t) { losses[t] = detail::block_loss(model, p, static_cast<int>(t), eval[t]); });
    for (std::size_t t = 0; t < n; ++t) {
      const double worst = std::isfinite(grads[t].loss) ? std::max(losses[t], grads[t].loss) : grads[t].loss;
      if (!std::isfinite(worst) || worst > 1e6)
        throw analysis_error("synth.train", std::string(to_string(mode)) + " training diverged at step " +
                                                std::to_string(step) + ", task " + suite.tasks[t] + ", loss " +
                                                std::to_string(worst) + " (lr " + std::to_string(cfg.lr) + ")");
    }
    log.losses.push_back(std::move(losses));

    if (mode == TrainMode::unified) {
      Eigen::MatrixXd up = Eigen::MatrixXd::Zero(p.shared_up.rows(), p.shared_up.cols());
      Eigen::MatrixXd down = Eigen::MatrixXd::Zero(p.shared_down.rows(), p.shared_down.cols());
      for (std::size_t t = 0; t < n; ++t) {
        up += grads[t].shared_up;
        down += grads[t].shared_down;
      }
      p.shared_up -= cfg.lr * up / static_cast<double>(n);
      p.shared_down -= cfg.lr * down / static_cast<double>(n);
      continue;
    }
    Eigen::MatrixXd up = Eigen::MatrixXd::Zero(p.shared_up.rows(), p.shared_up.cols());
    Eigen::MatrixXd down = Eigen::MatrixXd::Zero(p.shared_down.rows(), p.shared_down.cols());
    std::size_t active_groups = 0;
    for (std::size_t g = 0; g < members.size(); ++g) {
      if (members[g].empty()) continue;
      ++active_groups;
      Eigen::MatrixXd gup = Eigen::MatrixXd::Zero(p.shared_up.rows(), p.shared_up.cols());
      Eigen::MatrixXd gdown = Eigen::MatrixXd::Zero(p.shared_down.rows(), p.shared_down.cols());
      Eigen::MatrixXd pup = Eigen::MatrixXd::Zero(p.private_up[g].rows(), p.private_up[g].cols());
      Eigen::MatrixXd pdown = Eigen::MatrixXd::Zero(p.private_down[g].rows(), p.private_down[g].cols());
      for (int t : members[g]) {
        gup += grads[static_cast<std::size_t>(t)].shared_up;
        gdown += grads[static_cast<std::size_t>(t)].shared_down;
        pup += grads[static_cast<std::size_t>(t)].private_up;
        pdown += grads[static_cast<std::size_t>(t)].private_down;
      }
      const double inv = 1.0 / static_cast<double>(members[g].size());
      up += gup * inv;
      down += gdown * inv;
      p.private_up[g] -= cfg.lr * cfg.private_lr_multiplier * pup * inv;
      p.private_down[g] -= cfg.lr * cfg.private_lr_multiplier * pdown * inv;
    }
    p.shared_up -= cfg.lr * up / static_cast<double>(active_groups);
    p.shared_down -= cfg.lr * down / static_cast<double>(active_groups);
  }

  for (std::size_t t = 0; t < n; ++t) log.final_loss.push_back(detail::block_gradient(model, p, static_cast<int>(t), eval[t]).loss);
  log.cosine_after = detail::cross_task_cosines(model, p, eval);
  return log;
}

/// Per-task change in final cross-task gradient cosine, `specialized` minus `unified`.
inline std::vector<double> similarity_delta(const TrainLog& specialized, const TrainLog& unified) {
  if (specialized.tasks != unified.tasks || specialized.suite.seed != unified.suite.seed ||
      specialized.suite.theta_deg != unified.suite.theta_deg || specialized.suite.group_sizes != unified.suite.group_sizes)
    throw validation_error("synth.similarity_delta", "logs come from different suites");
  std::vector<double> out;
  for (std::size_t t = 0; t < specialized.tasks.size(); ++t)
    out.push_back(specialized.cosine_after[t] - unified.cosine_after[t]);
  return out;
}

}  // namespace gdps

#endif
