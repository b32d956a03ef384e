// gdps: gradient-driven parameter specialization toolkit.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gdps/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gdps;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw validation_error("cli.flags", "bad number '" + s + "' for " + what);
  }
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw validation_error("cli.flags", "bad integer '" + s + "' for " + what);
  }
}

RatioThresholds parse_thresholds(const std::string& s) {
  const auto parts = split(s, ',');
  if (parts.size() != 2) throw validation_error("cli.flags", "--thresholds expects low,high");
  RatioThresholds t;
  t.low = parse_double(parts[0], "--thresholds");
  t.high = parse_double(parts[1], "--thresholds");
  t.validate();
  return t;
}

std::pair<std::string, std::string> parse_pair(const std::string& s, const std::string& flag) {
  const auto parts = split(s, ',');
  if (parts.size() != 2) throw validation_error("cli.flags", flag + " expects two comma-separated paths");
  return {parts[0], parts[1]};
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_bytes(p, text, "cli.output");
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

void check_format(const std::string& format, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (format == a) return;
  throw validation_error("cli.flags", "--format " + format + " is not supported by this command");
}

/// Flags shared by the analysis commands, with their user-set tracking.
struct Common {
  std::string bundle;
  std::string layer;
  std::string layers;
  std::string thresholds = "0.05,0.15";
  std::string activation = "silu";
  std::string format = "json";
  std::string out;
  std::string weights;
  AnalysisConfig cfg;
  std::vector<std::pair<std::string, CLI::Option*>> tracked;

  std::set<std::string> user_set() const {
    std::set<std::string> s;
    for (const auto& [k, o] : tracked)
      if (o->count() > 0) s.insert(k);
    return s;
  }

  void finalize() {
    cfg.layer = layer;
    cfg.candidates = split(layers, ',');
    cfg.thresholds = parse_thresholds(thresholds);
    cfg.activation = activation_from_string(activation);
  }
};

void add_bundle(CLI::App* c, Common& o) { c->add_option("--bundle", o.bundle, "Gradient bundle directory")->required(); }

void add_layer(CLI::App* c, Common& o, bool required) {
  auto* opt = c->add_option("--layer", o.layer, "Layer to analyze");
  if (required) opt->required();
  o.tracked.emplace_back("layer", opt);
}

void add_output(CLI::App* c, Common& o, const std::string& what) {
  c->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"json", "md", "csv"}));
  c->add_option("--out", o.out, what);
}

void add_seed(CLI::App* c, Common& o) { o.tracked.emplace_back("seed", c->add_option("--seed", o.cfg.seed, "Master seed (default 2343)")); }

void add_grouping(CLI::App* c, Common& o) {
  o.tracked.emplace_back("k_groups", c->add_option("--k-groups", o.cfg.k_groups, "Number of task groups"));
}

void add_conflict(CLI::App* c, Common& o) {
  o.tracked.emplace_back("layers", c->add_option("--layers", o.layers, "Candidate layers a,b for the conflict pass"));
  o.tracked.emplace_back("thresholds", c->add_option("--thresholds", o.thresholds, "Ratio thresholds low,high"));
  o.tracked.emplace_back("max_samples", c->add_option("--max-samples", o.cfg.max_samples, "Per-task sample cap for pairwise cosines"));
}

void add_subspace(CLI::App* c, Common& o) {
  o.tracked.emplace_back("top_k", c->add_option("--top-k", o.cfg.top_k, "Top-k singular directions"));
  o.tracked.emplace_back("lambda", c->add_option("--lambda", o.cfg.lambda, "CCA ridge penalty"));
  o.tracked.emplace_back("normalize_rows", c->add_flag("--normalize-rows", o.cfg.normalize_rows, "Unit-normalize gradient rows first"));
}

void add_plan(CLI::App* c, Common& o) {
  o.tracked.emplace_back("noise", c->add_option("--noise", o.cfg.noise, "Noise scale for padded factors"));
  o.tracked.emplace_back("private_rank", c->add_option("--private-rank", o.cfg.private_rank, "Private rank t (0: d_p/N)"));
  o.tracked.emplace_back("r", c->add_option("--rank", o.cfg.r, "Shared truncation rank r (0: d_s/4)"));
  o.tracked.emplace_back("activation", c->add_option("--activation", o.activation, "identity|relu|silu|tanh"));
  o.tracked.emplace_back("d_model", c->add_option("--d-model", o.cfg.d_model, "Model width of the target block"));
  o.tracked.emplace_back("d_ff", c->add_option("--d-ff", o.cfg.d_ff, "Hidden width of the target block"));
  c->add_flag("--cca-coupling", o.cfg.cca_coupling, "Scale private noise by 1 - mean CCA rho");
  c->add_option("--weights", o.weights, "Unified weights w1.gdm,w2.gdm (sets d_model and d_ff)");
}

GradientBundle load(const Common& o) { return read_bundle(o.bundle); }

ojson envelope(const std::string& cmd, const Common& o) {
  ojson f{{"bundle", o.bundle}};
  const ojson cfg = to_json(o.cfg);
  for (const auto& [k, v] : cfg.items()) f[k] = v;
  AnalysisConfig baseline;
  if (!o.layer.empty()) baseline.candidates = {o.layer};
  ojson prov = provenance(analysis_defaults(), o.user_set(), cfg, to_json(baseline));
  if (!o.weights.empty()) {
    f["weights"] = o.weights;
    prov["d_model"] = prov["d_ff"] = "weights";
  }
  return report_envelope(cmd, f, prov);
}

// ---------------------------------------------------------------------------

int cmd_inspect(Common& o) {
  check_format(o.format, {"json", "md"});
  const GradientBundle b = load(o);
  const ojson s = bundle_summary(b, o.bundle);
  emit(o.format == "md" ? inspect_markdown(s) : dump(s), o.out);
  return 0;
}

int cmd_group(Common& o) {
  o.finalize();
  const GradientBundle b = load(o);
  require_two_tasks(b, "group.input");
  const GroupingResult r = consensus_group(b, o.layer, o.cfg.k_groups, o.cfg.seed);
  ojson doc = envelope("group", o);
  doc["fingerprint"] = bundle_fingerprint(b);
  doc["grouping"] = to_json(r);
  doc["warnings"] = r.warnings;
  if (o.format == "csv")
    emit(similarity_csv(doc["grouping"]), o.out);
  else if (o.format == "md")
    emit(grouping_markdown(doc["grouping"]), o.out);
  else
    emit(dump(doc), o.out);
  return 0;
}

int cmd_conflict(Common& o) {
  o.finalize();
  if (o.cfg.candidates.empty()) {
    if (o.layer.empty()) throw validation_error("conflict.input", "give --layer or --layers");
    o.cfg.candidates = {o.layer};
  }
  const GradientBundle b = load(o);
  require_two_tasks(b, "conflict.input");
  ConflictOptions co;
  co.max_samples = o.cfg.max_samples;
  co.seed = o.cfg.seed;
  const ConflictReport r = conflict_report(b, o.cfg.candidates, o.cfg.thresholds, co);
  ojson doc = envelope("conflict", o);
  doc["fingerprint"] = bundle_fingerprint(b);
  doc["conflict"] = to_json(r);
  doc["ranking"] = to_json(rank_conflicts(r.layers));
  doc["warnings"] = r.warnings;
  if (o.format == "csv")
    emit(conflict_csv(doc["conflict"]) + "\n" + ratio_trace_csv(doc["conflict"]), o.out);
  else if (o.format == "md")
    emit(conflict_markdown(doc["conflict"]), o.out);
  else
    emit(dump(doc), o.out);
  return 0;
}

int cmd_subspace(Common& o) {
  o.finalize();
  const GradientBundle b = load(o);
  SubspaceOptions so;
  so.top_k = o.cfg.top_k;
  so.lambda = o.cfg.lambda;
  so.normalize_rows = o.cfg.normalize_rows;
  const SubspaceReport r = subspace_report(b, o.layer, so);
  ojson doc = envelope("subspace", o);
  doc["fingerprint"] = bundle_fingerprint(b);
  doc["subspace"] = to_json(r);
  doc["warnings"] = r.warnings;
  if (o.format == "csv")
    emit(spectrum_csv(r.sigma), o.out);
  else if (o.format == "md")
    emit(subspace_markdown(doc["subspace"]), o.out);
  else
    emit(dump(doc), o.out);
  return 0;
}

int cmd_plan(Common& o) {
  o.finalize();
  if (o.out.empty()) throw validation_error("plan.output", "--out directory is required");
  check_format(o.format, {"json", "md"});
  if (!o.weights.empty()) {
    const auto [p1, p2] = parse_pair(o.weights, "--weights");
    const RowMatrix w1 = read_gdm(p1);
    o.cfg.d_ff = static_cast<int>(w1.rows());
    o.cfg.d_model = static_cast<int>(w1.cols());
  }
  const GradientBundle b = load(o);
  const Analysis a = analyze(b, o.cfg);
  const ojson doc = plan_report(a, bundle_summary(b, o.bundle), envelope("plan", o));
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_file_bytes(dir / "plan.json", dump(plan_to_json(a.plan)), "plan.output");
  write_file_bytes(dir / "report.json", dump(doc), "plan.output");
  const std::string md = plan_report_markdown(doc);
  write_file_bytes(dir / "report.md", md, "plan.output");
  std::cout << (o.format == "json" ? dump(doc) : md);
  return 0;
}

struct DecomposeOpts {
  std::string weights, plan, out;
  double noise = 0.0;
  std::uint64_t seed = kDefaultSeed;
  CLI::Option* noise_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

int cmd_decompose(DecomposeOpts& o) {
  const auto [p1, p2] = parse_pair(o.weights, "--weights");
  UnifiedFfnWeights w;
  w.w1 = read_gdm(p1);
  w.w2 = read_gdm(p2);
  std::string text;
  try {
    text = read_file_bytes(o.plan, "decompose.plan");
  } catch (const Error&) {
    throw validation_error("decompose.plan", "cannot read plan file " + o.plan);
  }
  nlohmann::json pj;
  try {
    pj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("decompose.plan", "unreadable plan " + o.plan + ": " + e.what());
  }
  DecompositionPlan plan = plan_from_json(pj);
  const bool noise_changed = o.noise_opt->count() && o.noise != plan.noise_scale;
  const bool seed_changed = o.seed_opt->count() && o.seed != plan.seed;
  if (noise_changed) {
    // Keep any CCA coupling factor between shared and private noise.
    const double factor = plan.noise_scale > 0 ? plan.private_noise_scale / plan.noise_scale : 1.0;
    plan.noise_scale = o.noise;
    plan.private_noise_scale = o.noise * factor;
  }
  if (seed_changed) plan.seed = o.seed;
  AssembleDiagnostics diag;
  const SpecializedFfn ffn = assemble(w, plan, &diag);
  save_specialized(ffn, plan, o.out);

  ojson flags{{"weights", o.weights}, {"plan", o.plan}, {"out", o.out}, {"noise", plan.noise_scale}, {"seed", plan.seed}};
  ojson prov{{"noise", noise_changed ? "user" : "plan"}, {"seed", seed_changed ? "user" : "plan"}};
  ojson doc = report_envelope("decompose", flags, prov);
  ojson shapes{{"shared_up", {ffn.shared_up.rows(), ffn.shared_up.cols()}},
               {"shared_down", {ffn.shared_down.rows(), ffn.shared_down.cols()}}};
  for (std::size_t g = 0; g < ffn.privates.size(); ++g)
    shapes[ffn.group_names[g]] = {{"up", {ffn.privates[g].up.rows(), ffn.privates[g].up.cols()}},
                                  {"down", {ffn.privates[g].down.rows(), ffn.privates[g].down.cols()}}};
  doc["shapes"] = shapes;
  doc["equiv_norm"] = diag.equiv_norm;
  doc["residual_norm"] = diag.residual_norm;
  doc["tail_energy_norm"] = diag.tail_energy_norm;
  doc["sigma"] = to_vector(diag.sigma);
  doc["warnings"] = diag.warnings;
  write_file_bytes(fs::path(o.out) / "decompose.json", dump(doc), "decompose.output");

  std::cout << "shared: up " << ffn.shared_up.rows() << "x" << ffn.shared_up.cols() << ", down " << ffn.shared_down.rows()
            << "x" << ffn.shared_down.cols() << "\n";
  for (std::size_t g = 0; g < ffn.privates.size(); ++g)
    std::cout << ffn.group_names[g] << " {" << join(plan.grouping.groups[g], ", ") << "}: up " << ffn.privates[g].up.rows()
              << "x" << ffn.privates[g].up.cols() << ", down " << ffn.privates[g].down.rows() << "x"
              << ffn.privates[g].down.cols() << "\n";
  std::cout << "||W_equiv|| = " << diag.equiv_norm << ", residual norm = " << diag.residual_norm
            << ", tail energy = " << diag.tail_energy_norm << "\n";
  for (const auto& wmsg : diag.warnings) std::cerr << "warning: " << wmsg << "\n";
  return 0;
}

struct SimulateOpts {
  SimulationConfig cfg;
  std::string groups = "1,3";
  int tasks = 0;
  std::string mode = "both";
  std::string thresholds = "0.05,0.15";
  std::string activation = "identity";
  std::string out;
  std::string format = "md";
  std::vector<std::pair<std::string, CLI::Option*>> tracked;
};

int cmd_simulate(SimulateOpts& o) {
  if (o.out.empty()) throw validation_error("simulate.output", "--out directory is required");
  check_format(o.format, {"json", "md"});
  std::vector<int> sizes;
  for (const auto& s : split(o.groups, ',')) sizes.push_back(parse_int(s, "--groups"));
  o.cfg.suite.group_sizes = sizes;
  if (o.tasks > 0 && o.tasks != o.cfg.suite.n_tasks())
    throw validation_error("simulate.input", "--tasks " + std::to_string(o.tasks) + " disagrees with --groups " + o.groups);
  o.cfg.run_unified = o.mode == "both" || o.mode == "unified";
  o.cfg.run_specialized = o.mode == "both" || o.mode == "specialized";
  o.cfg.analysis.thresholds = parse_thresholds(o.thresholds);
  o.cfg.model.activation = activation_from_string(o.activation);
  o.cfg.suite.d_in = o.cfg.suite.d_out = o.cfg.model.d_model;

  const SimulationResult r = run_simulation(o.cfg);
  std::set<std::string> user;
  for (const auto& [k, opt] : o.tracked)
    if (opt->count() > 0) user.insert(k);
  ojson doc = report_envelope("simulate", to_json(o.cfg), provenance(simulation_defaults(), user, to_json(o.cfg), to_json(SimulationConfig{})));
  const ojson body = simulation_json(r);
  for (const auto& [k, v] : body.items()) doc[k] = v;

  const fs::path dir(o.out);
  fs::create_directories(dir);
  for (const auto& run : r.runs) {
    if (run.unified) write_file_bytes(dir / seed_log_name(run, TrainMode::unified), train_csv(*run.unified), "simulate.output");
    if (run.specialized)
      write_file_bytes(dir / seed_log_name(run, TrainMode::specialized), train_csv(*run.specialized), "simulate.output");
  }
  write_file_bytes(dir / "summary.json", dump(doc), "simulate.output");
  const std::string md = simulation_markdown(doc);
  write_file_bytes(dir / "summary.md", md, "simulate.output");
  std::cout << (o.format == "json" ? dump(doc) : md);
  for (const auto& run : r.runs)
    if (!run.errors.empty()) return 2;
  return 0;
}

ojson load_document(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) {
    if (fs::exists(p / "report.json"))
      p /= "report.json";
    else if (fs::exists(p / "summary.json"))
      p /= "summary.json";
    else
      throw validation_error("report.input", path + " holds no report.json or summary.json");
  }
  if (!fs::exists(p)) throw validation_error("report.input", "missing input " + p.string());
  try {
    return ojson::parse(read_file_bytes(p, "report.input"));
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("report.input", "unreadable input " + p.string() + ": " + e.what());
  }
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, const std::string& out) {
  std::vector<ojson> docs;
  for (const auto& in : inputs) docs.push_back(load_document(in));
  const std::string kind = docs.front().value("command", "");
  for (const auto& d : docs)
    if (d.value("command", "") != kind) throw validation_error("report.input", "inputs mix different commands");

  if (kind == "simulate") {
    if (format == "json") {
      ojson all = ojson::array();
      for (std::size_t i = 0; i < docs.size(); ++i) all.push_back({{"input", inputs[i]}, {"summary", docs[i]["summary"]}});
      emit(dump(all), out);
    } else if (format == "csv") {
      emit(simulation_csv(inputs, docs), out);
    } else {
      emit(docs.size() == 1 ? simulation_markdown(docs.front()) : simulation_comparison_markdown(inputs, docs), out);
    }
    return 0;
  }
  if (kind != "plan") throw validation_error("report.input", "unsupported input kind '" + kind + "'");
  if (docs.size() != 1) throw validation_error("report.input", "plan reports are rendered one at a time");
  const ojson& d = docs.front();
  if (format == "json") {
    ojson r{{"fingerprint", d["bundle"]["fingerprint"]},
            {"delta", d["conflict"]["delta"]},
            {"branch", d["conflict"]["branch"]},
            {"branch_rule", d["conflict"]["branch_rule"]},
            {"shared_ratio", d["conflict"]["shared_ratio"]},
            {"groups", d["grouping"]["plan"]["groups"]},
            {"merges", d["grouping"]["merges"]},
            {"sigma", d["subspace"]["sigma"]},
            {"plan", d["plan"]}};
    emit(dump(r), out);
  } else if (format == "csv") {
    if (out.empty()) throw validation_error("report.output", "--format csv writes several files; give --out DIR");
    const fs::path dir(out);
    fs::create_directories(dir);
    write_file_bytes(dir / "similarity.csv", similarity_csv(d["grouping"]), "report.output");
    Eigen::VectorXd sigma(static_cast<Eigen::Index>(d["subspace"]["sigma"].size()));
    for (Eigen::Index i = 0; i < sigma.size(); ++i) sigma(i) = d["subspace"]["sigma"][static_cast<std::size_t>(i)].get<double>();
    write_file_bytes(dir / "spectrum.csv", spectrum_csv(sigma), "report.output");
    write_file_bytes(dir / "merges.csv", merges_csv(d["grouping"]), "report.output");
    write_file_bytes(dir / "ratio_trace.csv", ratio_trace_csv(d["conflict"]), "report.output");
  } else {
    emit(plan_report_markdown(d), out);
  }
  return 0;
}

struct SynthOpts {
  SuiteConfig suite;
  ModelConfig model;
  std::string groups = "1,3";
  std::string activation = "identity";
  int samples = 64;
  std::string out;
};

int cmd_synth(SynthOpts& o) {
  if (o.out.empty()) throw validation_error("synth.output", "--out directory is required");
  o.suite.group_sizes.clear();
  for (const auto& s : split(o.groups, ',')) o.suite.group_sizes.push_back(parse_int(s, "--groups"));
  o.model.activation = activation_from_string(o.activation);
  o.model.seed = o.suite.seed;
  o.suite.d_in = o.suite.d_out = o.model.d_model;
  const SyntheticSuite suite = make_suite(o.suite);
  const ToyModel model = make_toy_model(suite, o.model);
  const GradientBundle bundle = collect_bundle(model, suite, o.samples, o.suite.seed);
  const fs::path dir(o.out);
  write_bundle(bundle, dir / "bundle");
  write_gdm(dir / "w1.gdm", model.probe.w1);
  write_gdm(dir / "w2.gdm", model.probe.w2);
  ojson info{{"suite", to_json(o.suite)},
             {"planted", to_json(suite.planted)},
             {"d_model", o.model.d_model},
             {"d_ff", o.model.d_ff},
             {"activation", to_string(o.model.activation)},
             {"samples", o.samples},
             {"fingerprint", bundle_fingerprint(bundle)}};
  write_file_bytes(dir / "suite.json", dump(info), "synth.output");
  std::cout << "wrote " << (dir / "bundle").string() << " (" << suite.tasks.size() << " tasks, planted "
            << groups_text(to_json(suite.planted)["groups"]) << ") and weights w1.gdm, w2.gdm\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-driven parameter specialization: analysis, planning, decomposition and simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common inspect_o, group_o, conflict_o, subspace_o, plan_o;

  auto* inspect = app.add_subcommand("inspect", "Summarize a gradient bundle");
  add_bundle(inspect, inspect_o);
  add_output(inspect, inspect_o, "Output file (default stdout)");

  auto* group = app.add_subcommand("group", "Consensus task grouping (k-means + single linkage)");
  add_bundle(group, group_o);
  add_layer(group, group_o, true);
  add_grouping(group, group_o);
  add_seed(group, group_o);
  add_output(group, group_o, "Output file (default stdout)");

  auto* conflict = app.add_subcommand("conflict", "Intra/inter-task gradient similarity and the shared-ratio rule");
  add_bundle(conflict, conflict_o);
  add_layer(conflict, conflict_o, false);
  add_conflict(conflict, conflict_o);
  add_seed(conflict, conflict_o);
  add_output(conflict, conflict_o, "Output file (default stdout)");

  auto* subspace = app.add_subcommand("subspace", "Joint SVD energy split and ridge CCA");
  add_bundle(subspace, subspace_o);
  add_layer(subspace, subspace_o, true);
  add_subspace(subspace, subspace_o);
  add_output(subspace, subspace_o, "Output file (default stdout)");

  auto* plan = app.add_subcommand("plan", "Run grouping, conflict and subspace analysis and size a decomposition");
  add_bundle(plan, plan_o);
  add_layer(plan, plan_o, true);
  add_grouping(plan, plan_o);
  add_conflict(plan, plan_o);
  add_subspace(plan, plan_o);
  add_plan(plan, plan_o);
  add_seed(plan, plan_o);
  plan_o.format = "md";
  add_output(plan, plan_o, "Output directory for plan.json, report.json, report.md");

  DecomposeOpts dec_o;
  auto* decompose = app.add_subcommand("decompose", "Split unified FFN weights into shared and private branches");
  decompose->add_option("--weights", dec_o.weights, "w1.gdm,w2.gdm")->required();
  decompose->add_option("--plan", dec_o.plan, "plan.json")->required();
  decompose->add_option("--out", dec_o.out, "Output directory")->required();
  dec_o.noise_opt = decompose->add_option("--noise", dec_o.noise, "Override the plan's noise scale");
  dec_o.seed_opt = decompose->add_option("--seed", dec_o.seed, "Override the plan's seed");

  SimulateOpts sim_o;
  auto* simulate = app.add_subcommand("simulate", "Train unified and specialized toy models on a synthetic suite");
  auto track = [&](const char* key, CLI::Option* opt) { sim_o.tracked.emplace_back(key, opt); };
  track("theta", simulate->add_option("--theta", sim_o.cfg.suite.theta_deg, "Cross-group conflict angle (degrees)"));
  track("groups", simulate->add_option("--groups", sim_o.groups, "Planted group sizes, e.g. 1,3"));
  simulate->add_option("--tasks", sim_o.tasks, "Total task count (checked against --groups)");
  simulate->add_option("--spread", sim_o.cfg.suite.spread_deg, "Within-group spread (degrees)");
  simulate->add_option("--target-noise", sim_o.cfg.suite.noise, "Target noise std");
  track("steps", simulate->add_option("--steps", sim_o.cfg.train.steps, "Training steps"));
  track("lr", simulate->add_option("--lr", sim_o.cfg.train.lr, "Learning rate"));
  simulate->add_option("--batch", sim_o.cfg.train.batch, "Samples per task per step");
  simulate->add_option("--private-lr-mult", sim_o.cfg.train.private_lr_multiplier, "Private-branch learning-rate multiplier");
  track("seeds", simulate->add_option("--seeds", sim_o.cfg.seeds, "Number of seeds"));
  track("seed", simulate->add_option("--seed", sim_o.cfg.seed, "Master seed"));
  track("mode", simulate->add_option("--mode", sim_o.mode, "unified|specialized|both")
                    ->check(CLI::IsMember({"unified", "specialized", "both"})));
  track("noise", simulate->add_option("--noise", sim_o.cfg.analysis.noise, "Decomposition noise scale"));
  track("k_groups", simulate->add_option("--k-groups", sim_o.cfg.analysis.k_groups, "Number of task groups"));
  track("thresholds", simulate->add_option("--thresholds", sim_o.thresholds, "Ratio thresholds low,high"));
  track("top_k", simulate->add_option("--top-k", sim_o.cfg.analysis.top_k, "Top-k singular directions"));
  track("lambda", simulate->add_option("--lambda", sim_o.cfg.analysis.lambda, "CCA ridge penalty"));
  simulate->add_option("--private-rank", sim_o.cfg.analysis.private_rank, "Private rank t (0: d_p/N)");
  track("activation", simulate->add_option("--activation", sim_o.activation, "identity|relu|silu|tanh"));
  track("samples", simulate->add_option("--samples", sim_o.cfg.n_samples, "Gradient samples per task for analysis"));
  simulate->add_option("--d-model", sim_o.cfg.model.d_model, "Toy model width");
  simulate->add_option("--d-ff", sim_o.cfg.model.d_ff, "Toy probe hidden width");
  simulate->add_option("--format", sim_o.format, "Stdout format")->check(CLI::IsMember({"json", "md"}));
  simulate->add_option("--out", sim_o.out, "Output directory")->required();

  std::vector<std::string> report_in;
  std::string report_format = "md", report_out;
  auto* report = app.add_subcommand("report", "Render reports from earlier plan or simulate outputs");
  report->add_option("--in", report_in, "Input directories or JSON files")->required();
  report->add_option("--format", report_format, "md|json|csv")->check(CLI::IsMember({"json", "md", "csv"}));
  report->add_option("--out", report_out, "Output file (directory for csv)");

  SynthOpts syn_o;
  auto* synth = app.add_subcommand("synth", "Write a synthetic gradient bundle and matching unified weights");
  synth->add_option("--theta", syn_o.suite.theta_deg, "Cross-group conflict angle (degrees)");
  synth->add_option("--groups", syn_o.groups, "Planted group sizes");
  synth->add_option("--spread", syn_o.suite.spread_deg, "Within-group spread (degrees)");
  synth->add_option("--samples", syn_o.samples, "Gradient samples per task");
  synth->add_option("--seed", syn_o.suite.seed, "Seed");
  synth->add_option("--d-model", syn_o.model.d_model, "Toy model width");
  synth->add_option("--d-ff", syn_o.model.d_ff, "Toy probe hidden width");
  synth->add_option("--activation", syn_o.activation, "identity|relu|silu|tanh");
  synth->add_option("--out", syn_o.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (inspect->parsed()) return cmd_inspect(inspect_o);
    if (group->parsed()) return cmd_group(group_o);
    if (conflict->parsed()) return cmd_conflict(conflict_o);
    if (subspace->parsed()) return cmd_subspace(subspace_o);
    if (plan->parsed()) return cmd_plan(plan_o);
    if (decompose->parsed()) return cmd_decompose(dec_o);
    if (simulate->parsed()) return cmd_simulate(sim_o);
    if (report->parsed()) return cmd_report(report_in, report_format, report_out);
    if (synth->parsed()) return cmd_synth(syn_o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: [io] " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
