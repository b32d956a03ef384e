#ifndef GDPS_PIPELINE_HPP
#define GDPS_PIPELINE_HPP

// Command-level orchestration shared by the CLI and the tests: the analysis
// pass behind `plan`, multi-seed simulation, report documents and renderers.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gdps/serialize.hpp"

namespace gdps {

inline constexpr const char* kToolVersion = "1.0.0";

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Where a configuration value came from.
enum class Source { published, tool_default, user };

inline const char* to_string(Source s) {
  switch (s) {
    case Source::published: return "published";
    case Source::tool_default: return "tool-default";
    case Source::user: return "user";
  }
  return "?";
}

namespace detail {

inline const ojson* config_value(const ojson& cfg, const std::string& key) {
  if (cfg.contains(key)) return &cfg[key];
  if (cfg.contains("analysis") && cfg["analysis"].contains(key)) return &cfg["analysis"][key];
  return nullptr;
}

}  // namespace detail

/// Provenance map. A key is "user" when the user set it to something other than
/// the default; otherwise it keeps its default's origin, so replaying echoed
/// flags reproduces the same map.
inline ojson provenance(const std::vector<std::pair<std::string, Source>>& defaults, const std::set<std::string>& user_set,
                        const ojson& values, const ojson& baseline) {
  ojson out = ojson::object();
  for (const auto& [key, src] : defaults) {
    const ojson* v = detail::config_value(values, key);
    const ojson* b = detail::config_value(baseline, key);
    const bool changed = user_set.count(key) && (!v || !b || *v != *b);
    out[key] = to_string(changed ? Source::user : src);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analysis pass (grouping, conflict, subspace, plan)

struct AnalysisConfig {
  std::string layer;
  std::vector<std::string> candidates;  // conflict layers; empty means {layer}
  int k_groups = 2;
  RatioThresholds thresholds;
  int top_k = 10;
  double lambda = 1e-3;
  bool normalize_rows = false;
  int max_samples = 512;
  std::uint64_t seed = kDefaultSeed;
  double noise = 1e-4;
  int r = 0;
  int private_rank = 0;
  bool cca_coupling = false;
  Activation activation = Activation::silu;
  int d_model = 16;
  int d_ff = 32;
};

inline const std::vector<std::pair<std::string, Source>>& analysis_defaults() {
  static const std::vector<std::pair<std::string, Source>> d = {
      {"seed", Source::published},          {"thresholds", Source::published},         {"ratios", Source::published},
      {"k_groups", Source::published},      {"r", Source::published},                  {"private_rank", Source::published},
      {"top_k", Source::tool_default},  {"lambda", Source::tool_default},      {"noise", Source::tool_default},
      {"activation", Source::tool_default}, {"normalize_rows", Source::tool_default},
      {"max_samples", Source::tool_default}, {"d_model", Source::tool_default}, {"d_ff", Source::tool_default},
      {"layer", Source::tool_default},  {"layers", Source::tool_default}};
  return d;
}

inline ojson to_json(const AnalysisConfig& c) {
  return ojson{{"layer", c.layer},
               {"layers", c.candidates.empty() ? std::vector<std::string>{c.layer} : c.candidates},
               {"k_groups", c.k_groups},
               {"thresholds", {c.thresholds.low, c.thresholds.high}},
               {"ratios", {c.thresholds.ratios[0], c.thresholds.ratios[1], c.thresholds.ratios[2]}},
               {"top_k", c.top_k},
               {"lambda", c.lambda},
               {"normalize_rows", c.normalize_rows},
               {"max_samples", c.max_samples},
               {"seed", c.seed},
               {"noise", c.noise},
               {"r", c.r},
               {"private_rank", c.private_rank},
               {"cca_coupling", c.cca_coupling},
               {"activation", to_string(c.activation)},
               {"d_model", c.d_model},
               {"d_ff", c.d_ff}};
}

struct Analysis {
  GroupingResult grouping;
  ConflictReport conflict;
  SubspaceReport subspace;
  std::vector<double> p_g;
  DecompositionPlan plan;
  std::vector<std::string> warnings;
};

inline void require_two_tasks(const GradientBundle& bundle, const std::string& stage) {
  if (bundle.tasks().size() < 2)
    throw validation_error(stage, ">= 2 tasks required (bundle has " + std::to_string(bundle.tasks().size()) + ")");
}

inline Analysis analyze(const GradientBundle& bundle, const AnalysisConfig& cfg) {
  require_two_tasks(bundle, "plan.input");
  if (!bundle.has_layer(cfg.layer)) throw validation_error("plan.input", "unknown layer '" + cfg.layer + "'");
  Analysis a;
  a.grouping = consensus_group(bundle, cfg.layer, cfg.k_groups, cfg.seed);
  ConflictOptions co;
  co.max_samples = cfg.max_samples;
  co.seed = cfg.seed;
  a.conflict = conflict_report(bundle, cfg.candidates.empty() ? std::vector<std::string>{cfg.layer} : cfg.candidates,
                               cfg.thresholds, co);
  SubspaceOptions so;
  so.top_k = cfg.top_k;
  so.lambda = cfg.lambda;
  so.normalize_rows = cfg.normalize_rows;
  a.subspace = subspace_report(bundle, cfg.layer, so);
  a.p_g = group_energy(a.subspace.tasks, a.subspace.energy.proportions, a.grouping.plan);
  PlanOptions po;
  po.noise_scale = cfg.noise;
  po.seed = cfg.seed;
  po.activation = cfg.activation;
  po.r = cfg.r;
  po.private_rank = cfg.private_rank;
  po.cca_coupling = cfg.cca_coupling;
  po.mean_offdiagonal_rho = mean_offdiagonal_rho(a.subspace);
  a.plan = make_plan(a.grouping.plan, a.conflict.shared_ratio, cfg.d_model, cfg.d_ff, a.p_g, po);
  for (const auto* src : {&a.grouping.warnings, &a.conflict.warnings, &a.subspace.warnings, &a.plan.notes})
    a.warnings.insert(a.warnings.end(), src->begin(), src->end());
  return a;
}

// ---------------------------------------------------------------------------
// Report documents

/// Common envelope. `generated_at` is the only non-reproducible field.
inline ojson report_envelope(const std::string& command, ojson flags, ojson prov) {
  return ojson{{"tool", "gdps"},
               {"version", kToolVersion},
               {"command", command},
               {"generated_at", utc_timestamp()},
               {"flags", std::move(flags)},
               {"provenance", std::move(prov)}};
}

/// Copy of a report with the timestamp removed, for reproducibility comparisons.
template <class Json>
Json strip_timestamp(Json j) {
  if (j.is_object()) j.erase("generated_at");
  return j;
}

inline ojson bundle_summary(const GradientBundle& bundle, const std::string& path) {
  ojson layers = ojson::array();
  for (const auto& l : bundle.layers()) layers.push_back({{"name", l.name}, {"cols", l.cols}});
  ojson entries = ojson::array();
  for (const auto& t : bundle.tasks())
    for (const auto& l : bundle.layers()) {
      const RowMatrix& g = sample_gradients(bundle, t, l.name);
      entries.push_back({{"task", t}, {"layer", l.name}, {"rows", g.rows()}, {"cols", g.cols()},
                         {"frobenius", g.norm()}, {"mean_norm", mean_gradient(bundle, t, l.name).norm()}});
    }
  return ojson{{"path", path}, {"fingerprint", bundle_fingerprint(bundle)}, {"tasks", bundle.tasks()},
               {"layers", layers}, {"entries", entries}};
}

inline ojson plan_report(const Analysis& a, const ojson& bundle_info, ojson envelope) {
  envelope["bundle"] = bundle_info;
  envelope["grouping"] = to_json(a.grouping);
  envelope["conflict"] = to_json(a.conflict);
  envelope["subspace"] = to_json(a.subspace);
  envelope["p_g"] = a.p_g;
  envelope["plan"] = plan_to_json(a.plan);
  envelope["warnings"] = a.warnings;
  return envelope;
}

// ---------------------------------------------------------------------------
// Simulation

struct SimulationConfig {
  SuiteConfig suite;
  ModelConfig model;
  AnalysisConfig analysis;
  TrainConfig train;
  int n_samples = 64;  // gradient samples per task for the analysis pass
  int seeds = 5;
  std::uint64_t seed = kDefaultSeed;
  bool run_unified = true;
  bool run_specialized = true;
};

inline ojson to_json(const SimulationConfig& c) {
  ojson a = to_json(c.analysis);
  a.erase("layer");
  a.erase("layers");
  a.erase("seed");
  a.erase("activation");
  a.erase("d_model");
  a.erase("d_ff");
  return ojson{{"theta", c.suite.theta_deg},
               {"groups", c.suite.group_sizes},
               {"tasks", c.suite.n_tasks()},
               {"spread", c.suite.spread_deg},
               {"target_noise", c.suite.noise},
               {"d_in", c.suite.d_in},
               {"d_out", c.suite.d_out},
               {"d_model", c.model.d_model},
               {"d_ff", c.model.d_ff},
               {"activation", to_string(c.model.activation)},
               {"steps", c.train.steps},
               {"lr", c.train.lr},
               {"batch", c.train.batch},
               {"eval_samples", c.train.eval_samples},
               {"private_lr_multiplier", c.train.private_lr_multiplier},
               {"samples", c.n_samples},
               {"seeds", c.seeds},
               {"seed", c.seed},
               {"mode", c.run_unified && c.run_specialized ? "both" : c.run_unified ? "unified" : "specialized"},
               {"analysis", a}};
}

struct SeedRun {
  int index = 0;
  std::uint64_t seed = 0;
  std::optional<Analysis> analysis;
  std::optional<TrainLog> unified;
  std::optional<TrainLog> specialized;
  std::vector<std::string> errors;
};

struct SimulationSummary {
  int compared = 0;           // seeds with both modes finished
  int specialized_wins = 0;   // strictly lower specialized mean final loss
  double mean_unified = 0.0;  // over compared seeds
  double mean_specialized = 0.0;
  double relative_gap = 0.0;  // (mean_specialized - mean_unified) / mean_unified
  double mean_similarity_delta = 0.0;
};

struct SimulationResult {
  SimulationConfig config;
  std::vector<SeedRun> runs;
  SimulationSummary summary;
};

inline SimulationSummary summarize(const std::vector<SeedRun>& runs) {
  SimulationSummary s;
  for (const auto& r : runs) {
    if (!r.unified || !r.specialized) continue;
    ++s.compared;
    const double u = r.unified->mean_final_loss(), sp = r.specialized->mean_final_loss();
    s.mean_unified += u;
    s.mean_specialized += sp;
    if (sp < u) ++s.specialized_wins;
    const auto d = similarity_delta(*r.specialized, *r.unified);
    double m = 0.0;
    for (double v : d) m += v;
    s.mean_similarity_delta += d.empty() ? 0.0 : m / static_cast<double>(d.size());
  }
  if (s.compared > 0) {
    s.mean_unified /= s.compared;
    s.mean_specialized /= s.compared;
    s.mean_similarity_delta /= s.compared;
    s.relative_gap = s.mean_unified > 0 ? (s.mean_specialized - s.mean_unified) / s.mean_unified : 0.0;
  }
  return s;
}

/// One seed: suite, model, gradient collection, analysis pass, then training.
/// Failures are recorded on the run rather than thrown.
inline SeedRun run_seed(const SimulationConfig& cfg, int index) {
  SeedRun run;
  run.index = index;
  run.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));
  SuiteConfig sc = cfg.suite;
  sc.seed = run.seed;
  ModelConfig mc = cfg.model;
  mc.seed = run.seed;
  TrainConfig tc = cfg.train;
  tc.seed = run.seed;
  SyntheticSuite suite;
  ToyModel model;
  try {
    suite = make_suite(sc);
    model = make_toy_model(suite, mc);
  } catch (const Error& e) {
    run.errors.push_back(e.what());
    return run;
  }
  if (cfg.run_unified) {
    try {
      run.unified = train(model, suite, TrainMode::unified, nullptr, tc);
    } catch (const Error& e) {
      run.errors.push_back(std::string("unified: ") + e.what());
    }
  }
  if (cfg.run_specialized) {
    try {
      const GradientBundle bundle = collect_bundle(model, suite, cfg.n_samples, run.seed);
      AnalysisConfig ac = cfg.analysis;
      ac.layer = kProbeLayer;
      ac.candidates = {kProbeLayer};
      ac.seed = run.seed;
      ac.activation = mc.activation;
      ac.d_model = mc.d_model;
      ac.d_ff = mc.d_ff;
      run.analysis = analyze(bundle, ac);
      run.specialized = train(model, suite, TrainMode::specialized, &run.analysis->plan, tc);
    } catch (const Error& e) {
      run.errors.push_back(std::string("specialized: ") + e.what());
    }
  }
  return run;
}

inline SimulationResult run_simulation(const SimulationConfig& cfg) {
  if (cfg.seeds < 1) throw validation_error("simulate.input", "--seeds must be >= 1");
  if (!cfg.run_unified && !cfg.run_specialized) throw validation_error("simulate.input", "no mode selected");
  make_suite(cfg.suite);  // validates the suite parameters up front
  SimulationResult r;
  r.config = cfg;
  for (int i = 0; i < cfg.seeds; ++i) r.runs.push_back(run_seed(cfg, i));
  r.summary = summarize(r.runs);
  return r;
}

inline std::string seed_log_name(const SeedRun& r, TrainMode m) {
  return "seed" + std::to_string(r.index) + "_" + to_string(m) + ".csv";
}

inline ojson simulation_json(const SimulationResult& r) {
  ojson runs = ojson::array();
  for (const auto& s : r.runs) {
    ojson j{{"index", s.index}, {"seed", s.seed}};
    if (s.analysis) {
      j["conflict_delta"] = s.analysis->conflict.delta;
      j["shared_ratio"] = s.analysis->conflict.shared_ratio;
      j["grouping"] = to_json(s.analysis->grouping.plan);
      j["plan"] = plan_to_json(s.analysis->plan);
    }
    if (s.unified) {
      j["unified"] = train_summary_json(*s.unified);
      j["unified"]["log"] = seed_log_name(s, TrainMode::unified);
    }
    if (s.specialized) {
      j["specialized"] = train_summary_json(*s.specialized);
      j["specialized"]["log"] = seed_log_name(s, TrainMode::specialized);
    }
    if (s.unified && s.specialized) j["similarity_delta"] = similarity_delta(*s.specialized, *s.unified);
    j["errors"] = s.errors;
    runs.push_back(std::move(j));
  }
  const auto& m = r.summary;
  return ojson{{"runs", runs},
               {"summary",
                {{"compared", m.compared},
                 {"specialized_wins", m.specialized_wins},
                 {"mean_unified_loss", m.mean_unified},
                 {"mean_specialized_loss", m.mean_specialized},
                 {"relative_gap", m.relative_gap},
                 {"mean_similarity_delta", m.mean_similarity_delta}}}};
}

inline const std::vector<std::pair<std::string, Source>>& simulation_defaults() {
  static const std::vector<std::pair<std::string, Source>> d = {
      {"seed", Source::published},         {"thresholds", Source::published},       {"k_groups", Source::published},
      {"theta", Source::tool_default}, {"groups", Source::tool_default},    {"steps", Source::tool_default},
      {"lr", Source::tool_default},    {"seeds", Source::tool_default},     {"mode", Source::tool_default},
      {"noise", Source::tool_default}, {"top_k", Source::tool_default},     {"lambda", Source::tool_default},
      {"activation", Source::tool_default}, {"samples", Source::tool_default}};
  return d;
}

// ---------------------------------------------------------------------------
// Markdown and CSV renderers. All work on the JSON documents so `report`
// can regenerate them from files written by earlier commands.

inline std::string num(double v, int precision = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

template <class Json>
std::string groups_text(const Json& groups) {
  std::vector<std::string> out;
  for (const auto& g : groups) out.push_back("{" + join(g.template get<std::vector<std::string>>(), ", ") + "}");
  return join(out, " / ");
}

template <class Json>
void md_warnings(std::ostringstream& md, const Json& warnings) {
  if (warnings.empty()) return;
  md << "\n## Warnings\n\n";
  for (const auto& w : warnings) md << "- " << w.template get<std::string>() << "\n";
}

template <class Json>
void md_flags(std::ostringstream& md, const Json& doc) {
  if (!doc.contains("flags")) return;
  md << "\n## Flags\n\n| flag | value | source |\n|---|---|---|\n";
  for (const auto& [k, v] : doc["flags"].items()) {
    std::string src = "-";
    if (doc.contains("provenance") && doc["provenance"].contains(k)) src = doc["provenance"][k].template get<std::string>();
    md << "| " << k << " | " << v.dump() << " | " << src << " |\n";
  }
}

template <class Json>
std::string grouping_markdown(const Json& g) {
  std::ostringstream md;
  md << "### Grouping\n\n";
  md << "- plan (" << g["plan"]["method"].template get<std::string>() << "): " << groups_text(g["plan"]["groups"]) << "\n";
  md << "- k-means: " << groups_text(g["kmeans"]["groups"]) << " (inertia " << num(g["kmeans_inertia"].template get<double>(), 6)
     << ")\n";
  md << "- single linkage: " << groups_text(g["hierarchical"]["groups"]) << "\n\n";
  const auto tasks = g["tasks"].template get<std::vector<std::string>>();
  md << "Distance matrix (1 - cosine of mean gradients):\n\n|  | " << join(tasks, " | ") << " |\n|---";
  for (std::size_t i = 0; i < tasks.size(); ++i) md << "|---";
  md << "|\n";
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    md << "| " << tasks[i];
    for (std::size_t j = 0; j < tasks.size(); ++j) md << " | " << num(g["distance"][i][j].template get<double>());
    md << " |\n";
  }
  md << "\nMerges:\n\n| step | left | right | distance |\n|---|---|---|---|\n";
  std::size_t step = 1;
  for (const auto& m : g["merges"])
    md << "| " << step++ << " | " << join(m["left"].template get<std::vector<std::string>>(), ",") << " | "
       << join(m["right"].template get<std::vector<std::string>>(), ",") << " | " << num(m["distance"].template get<double>())
       << " |\n";
  return md.str();
}

template <class Json>
std::string conflict_markdown(const Json& c) {
  std::ostringstream md;
  md << "### Conflict\n\n| layer | s_self | s_cross | delta | purity | degenerate pairs |\n|---|---|---|---|---|---|\n";
  for (const auto& l : c["layers"])
    md << "| " << l["layer"].template get<std::string>() << " | " << num(l["s_self"].template get<double>()) << " | "
       << num(l["s_cross"].template get<double>()) << " | " << num(l["delta"].template get<double>()) << " | "
       << num(l["purity"].template get<double>()) << " | " << l["degenerate_pairs"].template get<long long>() << "/"
       << l["total_pairs"].template get<long long>() << " |\n";
  md << "\n- aggregate delta: " << num(c["delta"].template get<double>(), 6) << "\n";
  md << "- branch fired: " << c["branch"].template get<int>() << " (" << c["branch_rule"].template get<std::string>() << ")\n";
  md << "- shared ratio: " << num(c["shared_ratio"].template get<double>(), 2) << "\n";
  return md.str();
}

template <class Json>
std::string subspace_markdown(const Json& s) {
  std::ostringstream md;
  md << "### Subspace\n\n- layer: " << s["layer"].template get<std::string>() << ", k = " << s["k"].template get<int>()
     << "\n- top-1 energy share: " << num(s["top1_share"].template get<double>()) << "\n- Gini (top-k energies): "
     << num(s["gini_topk"].template get<double>()) << "\n- mean off-diagonal CCA rho: "
     << num(s["mean_offdiagonal_rho"].template get<double>()) << " (lambda " << s["lambda"].template get<double>() << ")\n\n";
  md << "| task | energy | proportion |\n|---|---|---|\n";
  for (std::size_t i = 0; i < s["tasks"].size(); ++i)
    md << "| " << s["tasks"][i].template get<std::string>() << " | " << num(s["energies"][i].template get<double>(), 6) << " | "
       << num(s["proportions"][i].template get<double>()) << " |\n";
  return md.str();
}

template <class Json>
std::string plan_markdown(const Json& p) {
  std::ostringstream md;
  md << "### Decomposition plan\n\n| field | value |\n|---|---|\n";
  md << "| groups | " << groups_text(p["grouping"]["groups"]) << " |\n";
  for (const char* k : {"shared_ratio", "d_model", "d_ff", "d_s", "d_p", "r", "private_rank", "noise_scale", "seed", "activation"})
    md << "| " << k << " | " << p[k].dump() << " |\n";
  md << "| p_g | " << p["p_g"].dump() << " |\n";
  for (const auto& n : p["notes"]) md << "\nNote: " << n.template get<std::string>() << "\n";
  return md.str();
}

template <class Json>
std::string plan_report_markdown(const Json& doc) {
  std::ostringstream md;
  md << "# GDPS plan report\n\n";
  md << "- bundle: `" << doc["bundle"]["path"].template get<std::string>() << "` (fingerprint "
     << doc["bundle"]["fingerprint"].template get<std::string>() << ")\n";
  md << "- tasks: " << join(doc["bundle"]["tasks"].template get<std::vector<std::string>>(), ", ") << "\n";
  md << "- delta = " << num(doc["conflict"]["delta"].template get<double>(), 6) << ", branch "
     << doc["conflict"]["branch"].template get<int>() << ", shared ratio "
     << num(doc["conflict"]["shared_ratio"].template get<double>(), 2) << "\n\n";
  md << grouping_markdown(doc["grouping"]) << "\n" << conflict_markdown(doc["conflict"]) << "\n"
     << subspace_markdown(doc["subspace"]) << "\n" << plan_markdown(doc["plan"]);
  md_flags(md, doc);
  md_warnings(md, doc["warnings"]);
  return md.str();
}

template <class Json>
std::string simulation_markdown(const Json& doc) {
  std::ostringstream md;
  md << "# GDPS simulation\n\n";
  const auto& f = doc["flags"];
  md << "theta " << f["theta"].dump() << " deg, groups " << f["groups"].dump() << ", " << f["steps"].dump()
     << " steps, lr " << f["lr"].dump() << ", " << f["seeds"].dump() << " seed(s)\n\n";
  md << "| seed | unified loss | specialized loss | winner | cosine delta | delta | ratio |\n|---|---|---|---|---|---|---|\n";
  for (const auto& r : doc["runs"]) {
    const bool u = r.contains("unified"), s = r.contains("specialized");
    md << "| " << r["index"].template get<int>() << " | "
       << (u ? num(r["unified"]["mean_final_loss"].template get<double>()) : "-") << " | "
       << (s ? num(r["specialized"]["mean_final_loss"].template get<double>()) : "-") << " | ";
    if (u && s)
      md << (r["specialized"]["mean_final_loss"].template get<double>() < r["unified"]["mean_final_loss"].template get<double>()
                 ? "specialized"
                 : "unified");
    else
      md << "-";
    md << " | ";
    if (r.contains("similarity_delta")) {
      double m = 0.0;
      for (const auto& v : r["similarity_delta"]) m += v.template get<double>();
      md << num(m / static_cast<double>(r["similarity_delta"].size()));
    } else {
      md << "-";
    }
    md << " | " << (r.contains("conflict_delta") ? num(r["conflict_delta"].template get<double>()) : "-") << " | "
       << (r.contains("shared_ratio") ? num(r["shared_ratio"].template get<double>(), 2) : "-") << " |\n";
  }
  const auto& s = doc["summary"];
  md << "\n- compared seeds: " << s["compared"].template get<int>() << ", specialized wins: "
     << s["specialized_wins"].template get<int>() << "\n- mean final loss: unified "
     << num(s["mean_unified_loss"].template get<double>()) << ", specialized "
     << num(s["mean_specialized_loss"].template get<double>()) << " (relative gap "
     << num(100.0 * s["relative_gap"].template get<double>(), 2) << "%)\n- mean cross-task cosine delta: "
     << num(s["mean_similarity_delta"].template get<double>()) << "\n";
  bool any = false;
  for (const auto& r : doc["runs"])
    for (const auto& e : r["errors"]) {
      if (!any) md << "\n## Errors\n\n";
      any = true;
      md << "- seed " << r["index"].template get<int>() << ": " << e.template get<std::string>() << "\n";
    }
  return md.str();
}

/// Side-by-side summary of several simulation documents.
template <class Json>
std::string simulation_comparison_markdown(const std::vector<std::string>& names, const std::vector<Json>& docs) {
  std::ostringstream md;
  md << "# GDPS simulation comparison\n\n| run | theta | seeds | unified loss | specialized loss | gap | wins | cosine delta |\n"
        "|---|---|---|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& s = docs[i]["summary"];
    md << "| " << names[i] << " | " << docs[i]["flags"]["theta"].dump() << " | " << docs[i]["flags"]["seeds"].dump() << " | "
       << num(s["mean_unified_loss"].template get<double>()) << " | " << num(s["mean_specialized_loss"].template get<double>())
       << " | " << num(100.0 * s["relative_gap"].template get<double>(), 2) << "% | "
       << s["specialized_wins"].template get<int>() << "/" << s["compared"].template get<int>() << " | "
       << num(s["mean_similarity_delta"].template get<double>()) << " |\n";
  }
  return md.str();
}

template <class Json>
std::string similarity_csv(const Json& grouping) {
  std::ostringstream out;
  out << std::setprecision(17);
  const auto tasks = grouping["tasks"].template get<std::vector<std::string>>();
  out << "task";
  for (const auto& t : tasks) out << ',' << t;
  out << '\n';
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out << tasks[i];
    for (std::size_t j = 0; j < tasks.size(); ++j) out << ',' << grouping["similarity"][i][j].template get<double>();
    out << '\n';
  }
  return out.str();
}

template <class Json>
std::string merges_csv(const Json& grouping) {
  std::ostringstream out;
  out << std::setprecision(17) << "step,left,right,distance\n";
  std::size_t step = 1;
  for (const auto& m : grouping["merges"])
    out << step++ << ',' << join(m["left"].template get<std::vector<std::string>>(), ";") << ','
        << join(m["right"].template get<std::vector<std::string>>(), ";") << ',' << m["distance"].template get<double>() << '\n';
  return out.str();
}

template <class Json>
std::string ratio_trace_csv(const Json& conflict) {
  std::ostringstream out;
  out << std::setprecision(17) << "item,value\n";
  for (const auto& l : conflict["layers"]) out << "delta[" << l["layer"].template get<std::string>() << "]," << l["delta"].template get<double>() << '\n';
  out << "aggregate_delta," << conflict["delta"].template get<double>() << '\n';
  out << "threshold_low," << conflict["thresholds"]["low"].template get<double>() << '\n';
  out << "threshold_high," << conflict["thresholds"]["high"].template get<double>() << '\n';
  out << "branch," << conflict["branch"].template get<int>() << '\n';
  out << "rule,\"" << conflict["branch_rule"].template get<std::string>() << "\"\n";
  out << "shared_ratio," << conflict["shared_ratio"].template get<double>() << '\n';
  return out.str();
}

template <class Json>
std::string conflict_csv(const Json& c) {
  std::ostringstream out;
  out << std::setprecision(17) << "layer,s_self,s_cross,delta,purity,degenerate_pairs,total_pairs\n";
  for (const auto& l : c["layers"])
    out << l["layer"].template get<std::string>() << ',' << l["s_self"].template get<double>() << ','
        << l["s_cross"].template get<double>() << ',' << l["delta"].template get<double>() << ','
        << l["purity"].template get<double>() << ',' << l["degenerate_pairs"].template get<long long>() << ','
        << l["total_pairs"].template get<long long>() << '\n';
  return out.str();
}

template <class Json>
std::string simulation_csv(const std::vector<std::string>& names, const std::vector<Json>& docs) {
  std::ostringstream out;
  out << std::setprecision(17) << "run,seed,unified_loss,specialized_loss,mean_similarity_delta\n";
  for (std::size_t i = 0; i < docs.size(); ++i)
    for (const auto& r : docs[i]["runs"]) {
      out << names[i] << ',' << r["index"].template get<int>() << ',';
      if (r.contains("unified")) out << r["unified"]["mean_final_loss"].template get<double>();
      out << ',';
      if (r.contains("specialized")) out << r["specialized"]["mean_final_loss"].template get<double>();
      out << ',';
      if (r.contains("similarity_delta")) {
        double m = 0.0;
        for (const auto& v : r["similarity_delta"]) m += v.template get<double>();
        out << m / static_cast<double>(r["similarity_delta"].size());
      }
      out << '\n';
    }
  return out.str();
}

inline std::string inspect_markdown(const ojson& b) {
  std::ostringstream md;
  md << "# Bundle `" << b["path"].get<std::string>() << "`\n\n- fingerprint: " << b["fingerprint"].get<std::string>()
     << "\n- tasks: " << join(b["tasks"].get<std::vector<std::string>>(), ", ") << "\n\n| task | layer | rows | cols | ||G||_F | ||mean|| |\n|---|---|---|---|---|---|\n";
  for (const auto& e : b["entries"])
    md << "| " << e["task"].get<std::string>() << " | " << e["layer"].get<std::string>() << " | " << e["rows"].get<long long>()
       << " | " << e["cols"].get<long long>() << " | " << num(e["frobenius"].get<double>(), 6) << " | "
       << num(e["mean_norm"].get<double>(), 6) << " |\n";
  return md.str();
}

}  // namespace gdps

#endif
