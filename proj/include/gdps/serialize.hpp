#ifndef GDPS_SERIALIZE_HPP
#define GDPS_SERIALIZE_HPP

// JSON and CSV forms of every report type, plus SpecializedFfn persistence.

#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdps/conflict.hpp"
#include "gdps/decomposer.hpp"
#include "gdps/gradbundle.hpp"
#include "gdps/grouping.hpp"
#include "gdps/subspace.hpp"
#include "gdps/synthbench.hpp"

namespace gdps {

using ojson = nlohmann::ordered_json;

inline ojson matrix_to_json(const Eigen::MatrixXd& m) {
  ojson rows = ojson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ojson row = ojson::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// --- grouping --------------------------------------------------------------

inline ojson to_json(const GroupingPlan& plan) {
  return ojson{{"method", to_string(plan.method)}, {"k", plan.k()}, {"groups", plan.groups}};
}

inline GroupingPlan grouping_from_json(const nlohmann::json& j) {
  GroupingPlan plan;
  try {
    plan.method = grouping_method_from_string(j.at("method").get<std::string>());
    plan.groups = j.at("groups").get<std::vector<std::vector<std::string>>>();
    if (j.contains("k") && j.at("k").get<int>() != plan.k())
      throw validation_error("grouping.parse", "k does not match the number of groups");
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("grouping.parse", e.what());
  }
  return plan;
}

inline ojson to_json(const GroupingResult& r) {
  ojson merges = ojson::array();
  for (const auto& m : r.merges) merges.push_back({{"left", m.left}, {"right", m.right}, {"distance", m.distance}});
  return ojson{{"plan", to_json(r.plan)},
               {"kmeans", to_json(r.kmeans_plan)},
               {"kmeans_inertia", r.kmeans_inertia},
               {"hierarchical", to_json(r.hierarchical_plan)},
               {"tasks", r.distance.tasks},
               {"similarity", matrix_to_json(r.similarity.s)},
               {"distance", matrix_to_json(r.distance.d)},
               {"degenerate_pairs", r.similarity.degenerate},
               {"merges", merges},
               {"warnings", r.warnings}};
}

// --- conflict --------------------------------------------------------------

inline ojson to_json(const LayerConflict& c) {
  return ojson{{"layer", c.layer},
               {"s_self", c.s_self},
               {"s_cross", c.s_cross},
               {"delta", c.delta},
               {"purity", c.purity},
               {"purity_definition", "fraction of cross-task sample pairs with cosine >= 0 (tool-defined)"},
               {"per_task_self", c.per_task_self},
               {"degenerate_pairs", c.degenerate_pairs},
               {"total_pairs", c.total_pairs},
               {"warnings", c.warnings}};
}

inline ojson to_json(const RatioThresholds& t) {
  return ojson{{"low", t.low}, {"high", t.high}, {"ratios", {t.ratios[0], t.ratios[1], t.ratios[2]}}};
}

inline ojson to_json(const ConflictReport& r) {
  ojson layers = ojson::array();
  for (const auto& l : r.layers) layers.push_back(to_json(l));
  return ojson{{"layers", layers},
               {"candidates", r.candidates},
               {"delta", r.delta},
               {"shared_ratio", r.shared_ratio},
               {"branch", r.branch},
               {"branch_rule", describe_branch(r.thresholds, r.branch)},
               {"thresholds", to_json(r.thresholds)},
               {"warnings", r.warnings}};
}

inline ojson to_json(const std::vector<RankedLayer>& ranked) {
  ojson out = ojson::array();
  for (std::size_t i = 0; i < ranked.size(); ++i)
    out.push_back({{"rank", i + 1}, {"score", ranked[i].score}, {"conflict", to_json(ranked[i].conflict)}});
  return out;
}

// --- subspace --------------------------------------------------------------

inline ojson to_json(const SubspaceReport& r) {
  return ojson{{"layer", r.layer},
               {"tasks", r.tasks},
               {"k", r.k},
               {"normalize_rows", r.normalize_rows},
               {"sigma", to_vector(r.sigma)},
               {"energies", r.energy.energies},
               {"proportions", r.energy.proportions},
               {"top1_share", r.stats.top1_share},
               {"gini_topk", r.stats.gini},
               {"lambda", r.lambda},
               {"cca", matrix_to_json(r.cca)},
               {"mean_offdiagonal_rho", mean_offdiagonal_rho(r)},
               {"warnings", r.warnings}};
}

/// `index,sigma,energy_share` rows, one per singular value.
inline std::string spectrum_csv(const Eigen::VectorXd& sigma) {
  std::ostringstream out;
  out << std::setprecision(17) << "index,sigma,energy_share\n";
  const double total = sigma.squaredNorm();
  for (Eigen::Index i = 0; i < sigma.size(); ++i)
    out << i << ',' << sigma(i) << ',' << (total > 0 ? sigma(i) * sigma(i) / total : 0.0) << '\n';
  return out.str();
}

// --- decomposition plan ----------------------------------------------------

inline ojson plan_to_json(const DecompositionPlan& p) {
  return ojson{{"grouping", to_json(p.grouping)},
               {"shared_ratio", p.shared_ratio},
               {"d_model", p.d_model},
               {"d_ff", p.d_ff},
               {"d_s", p.d_s},
               {"d_p", p.d_p},
               {"p_g", p.p_g},
               {"r", p.r},
               {"private_rank", p.private_rank},
               {"noise_scale", p.noise_scale},
               {"private_noise_scale", p.private_noise_scale},
               {"cca_coupling", p.cca_coupling},
               {"seed", p.seed},
               {"activation", to_string(p.activation)},
               {"notes", p.notes}};
}

inline DecompositionPlan plan_from_json(const nlohmann::json& j) {
  DecompositionPlan p;
  try {
    p.grouping = grouping_from_json(j.at("grouping"));
    p.shared_ratio = j.at("shared_ratio").get<double>();
    p.d_model = j.at("d_model").get<int>();
    p.d_ff = j.at("d_ff").get<int>();
    p.d_s = j.at("d_s").get<int>();
    p.d_p = j.at("d_p").get<int>();
    p.p_g = j.at("p_g").get<std::vector<double>>();
    p.r = j.at("r").get<int>();
    p.private_rank = j.value("private_rank", std::max(1, p.d_p / std::max(1, p.grouping.k())));
    p.noise_scale = j.at("noise_scale").get<double>();
    p.private_noise_scale = j.value("private_noise_scale", p.noise_scale);
    p.cca_coupling = j.value("cca_coupling", false);
    p.seed = j.at("seed").get<std::uint64_t>();
    p.activation = activation_from_string(j.at("activation").get<std::string>());
    p.notes = j.value("notes", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("plan.parse", e.what());
  }
  p.validate();
  return p;
}

// --- training logs ---------------------------------------------------------

inline ojson to_json(const SuiteConfig& c) {
  return ojson{{"group_sizes", c.group_sizes}, {"theta_deg", c.theta_deg}, {"spread_deg", c.spread_deg},
               {"d_in", c.d_in},               {"d_out", c.d_out},         {"noise", c.noise},
               {"seed", c.seed}};
}

inline ojson train_summary_json(const TrainLog& log) {
  return ojson{{"mode", to_string(log.mode)},
               {"seed", log.seed},
               {"steps", log.steps},
               {"suite", to_json(log.suite)},
               {"tasks", log.tasks},
               {"final_loss", log.final_loss},
               {"mean_final_loss", log.mean_final_loss()},
               {"cosine_before", log.cosine_before},
               {"cosine_after", log.cosine_after}};
}

/// `step,task,loss` rows.
inline std::string train_csv(const TrainLog& log) {
  std::ostringstream out;
  out << std::setprecision(17) << "step,task,loss\n";
  for (std::size_t s = 0; s < log.losses.size(); ++s)
    for (std::size_t t = 0; t < log.tasks.size(); ++t) out << s << ',' << log.tasks[t] << ',' << log.losses[s][t] << '\n';
  return out.str();
}

// --- specialized block on disk ---------------------------------------------

inline void save_specialized(const SpecializedFfn& ffn, const DecompositionPlan& plan, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw validation_error("decomposer.save", "cannot create " + dir.string());
  write_gdm(dir / "shared_up.gdm", ffn.shared_up);
  write_gdm(dir / "shared_down.gdm", ffn.shared_down);
  ojson j;
  j["d_model"] = ffn.d_model();
  j["d_s"] = ffn.shared_up.rows();
  j["activation"] = to_string(ffn.activation);
  j["shared"] = {{"up", "shared_up.gdm"}, {"down", "shared_down.gdm"}};
  j["groups"] = ojson::array();
  for (std::size_t g = 0; g < ffn.privates.size(); ++g) {
    const std::string up = "private_up_" + std::to_string(g) + ".gdm";
    const std::string down = "private_down_" + std::to_string(g) + ".gdm";
    write_gdm(dir / up, ffn.privates[g].up);
    write_gdm(dir / down, ffn.privates[g].down);
    j["groups"].push_back({{"name", ffn.group_names[g]},
                           {"d_p", ffn.privates[g].up.rows()},
                           {"up", up},
                           {"down", down},
                           {"tasks", plan.grouping.groups[g]}});
  }
  j["routing"] = ojson::object();
  for (const auto& [task, g] : ffn.routing) j["routing"][task] = g;
  j["plan"] = plan_to_json(plan);
  write_file_bytes(dir / "ffn.json", j.dump(2) + "\n", "decomposer.save");
}

inline SpecializedFfn load_specialized(const std::filesystem::path& dir) {
  SpecializedFfn ffn;
  try {
    const auto j = nlohmann::json::parse(read_file_bytes(dir / "ffn.json", "decomposer.load"));
    ffn.activation = activation_from_string(j.at("activation").get<std::string>());
    ffn.shared_up = read_gdm(dir / j.at("shared").at("up").get<std::string>());
    ffn.shared_down = read_gdm(dir / j.at("shared").at("down").get<std::string>());
    for (const auto& g : j.at("groups")) {
      ffn.group_names.push_back(g.at("name").get<std::string>());
      ffn.privates.push_back({read_gdm(dir / g.at("up").get<std::string>()), read_gdm(dir / g.at("down").get<std::string>())});
    }
    for (const auto& [task, g] : j.at("routing").items()) ffn.routing[task] = g.get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("decomposer.load", std::string("bad ffn.json: ") + e.what());
  }
  ffn.validate();
  return ffn;
}

}  // namespace gdps

#endif
