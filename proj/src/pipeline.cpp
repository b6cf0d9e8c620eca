#include "brainage/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "brainage/rng.hpp"
#include "brainage/stats.hpp"

namespace brainage::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

[[noreturn]] void bad_config(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::ConfigInvalid, where + ": " + what);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) bad_config(where, "expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) bad_config(where, "unknown key '" + k + "'");
  }
}

void read(const json& j, const std::string& where, const char* key, double& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_number()) bad_config(where, std::string(key) + " must be a number");
  out = j[key].get<double>();
}

void read(const json& j, const std::string& where, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_number_unsigned()) bad_config(where, std::string(key) + " must be a non-negative integer");
  out = j[key].get<std::size_t>();
}

void read(const json& j, const std::string& where, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_string()) bad_config(where, std::string(key) + " must be a string");
  out = j[key].get<std::string>();
}

json train_to_json(const TrainSection& t) {
  return {{"input_edge", t.input_edge}, {"lr", t.lr},         {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs}, {"patience", t.patience}, {"min_improvement", t.min_improvement}};
}

TrainSection train_from_json(const json& j, const std::string& where) {
  check_keys(j, where, {"input_edge", "lr", "batch_size", "max_epochs", "patience", "min_improvement"});
  TrainSection t;
  read(j, where, "input_edge", t.input_edge);
  read(j, where, "lr", t.lr);
  read(j, where, "batch_size", t.batch_size);
  read(j, where, "max_epochs", t.max_epochs);
  read(j, where, "patience", t.patience);
  read(j, where, "min_improvement", t.min_improvement);
  return t;
}

json phantom_to_json(const PhantomSpec& p) {
  json profiles = json::array();
  for (const auto& pr : p.project_profiles) {
    profiles.push_back({{"label", pr.label}, {"age_low", pr.age_low}, {"age_high", pr.age_high}, {"weight", pr.weight}});
  }
  return {{"count", p.count},
          {"grid", p.grid},
          {"sigma_modality", p.sigma_modality},
          {"sex_offset", p.sex_offset},
          {"noise_sigma", p.noise_sigma},
          {"projects", profiles}};
}

PhantomSpec phantom_from_json(const json& j) {
  const std::string where = "phantom";
  check_keys(j, where, {"count", "grid", "sigma_modality", "sex_offset", "noise_sigma", "projects"});
  PhantomSpec p;
  read(j, where, "count", p.count);
  read(j, where, "grid", p.grid);
  read(j, where, "sigma_modality", p.sigma_modality);
  read(j, where, "sex_offset", p.sex_offset);
  read(j, where, "noise_sigma", p.noise_sigma);
  if (j.contains("projects")) {
    if (!j["projects"].is_array()) bad_config(where, "projects must be an array");
    p.project_profiles.clear();
    for (const auto& pj : j["projects"]) {
      const std::string pw = "phantom.projects";
      check_keys(pj, pw, {"label", "age_low", "age_high", "weight"});
      ProjectProfile pr;
      read(pj, pw, "label", pr.label);
      read(pj, pw, "age_low", pr.age_low);
      read(pj, pw, "age_high", pr.age_high);
      read(pj, pw, "weight", pr.weight);
      p.project_profiles.push_back(pr);
    }
  }
  return p;
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"phantom", phantom_to_json(c.phantom)},
          {"split", {{"holdout_order", c.split.order == HoldoutOrder::ValidationFirst ? "validation_first" : "test_first"}}},
          {"train_t1w", train_to_json(c.train_t1w)},
          {"train_aicbv", train_to_json(c.train_aicbv)},
          {"ensemble", {{"age_bin_width", c.ensemble.age_bin_width}}},
          {"saliency", {{"fraction", c.saliency.fraction}, {"reduction", std::string(to_string(c.saliency.reduction))}}},
          {"paths", {{"out", c.paths.out.string()}}}};
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"seed", "phantom", "split", "train_t1w", "train_aicbv", "ensemble", "saliency", "paths"});
  RunConfig c;
  read(j, "config", "seed", c.seed);
  if (j.contains("phantom")) c.phantom = phantom_from_json(j["phantom"]);
  if (j.contains("split")) {
    check_keys(j["split"], "split", {"holdout_order"});
    std::string order = "validation_first";
    read(j["split"], "split", "holdout_order", order);
    if (order == "validation_first") {
      c.split.order = HoldoutOrder::ValidationFirst;
    } else if (order == "test_first") {
      c.split.order = HoldoutOrder::TestFirst;
    } else {
      bad_config("split", "holdout_order must be 'validation_first' or 'test_first'");
    }
  }
  if (j.contains("train_t1w")) c.train_t1w = train_from_json(j["train_t1w"], "train_t1w");
  if (j.contains("train_aicbv")) c.train_aicbv = train_from_json(j["train_aicbv"], "train_aicbv");
  if (j.contains("ensemble")) {
    check_keys(j["ensemble"], "ensemble", {"age_bin_width"});
    read(j["ensemble"], "ensemble", "age_bin_width", c.ensemble.age_bin_width);
  }
  if (j.contains("saliency")) {
    check_keys(j["saliency"], "saliency", {"fraction", "reduction"});
    read(j["saliency"], "saliency", "fraction", c.saliency.fraction);
    std::string red(to_string(c.saliency.reduction));
    read(j["saliency"], "saliency", "reduction", red);
    c.saliency.reduction = parse_grad_reduction(red);
  }
  if (j.contains("paths")) {
    check_keys(j["paths"], "paths", {"out"});
    std::string out = c.paths.out.string();
    read(j["paths"], "paths", "out", out);
    c.paths.out = out;
  }
  validate(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void validate(const RunConfig& c) {
  auto rethrow = [](const std::string& where, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigInvalid, where + ": " + e.what());
    }
  };
  rethrow("phantom", [&] { brainage::validate(c.phantom); });
  for (Modality m : {Modality::T1w, Modality::AICBV}) {
    const std::string where = m == Modality::T1w ? "train_t1w" : "train_aicbv";
    rethrow(where, [&] { brainage::validate(train_config(c, m)); });
    rethrow(where, [&] { brainage::validate(model_config(c, m)); });
  }
  if (!(c.ensemble.age_bin_width > 0.0)) bad_config("ensemble", "age_bin_width must be positive");
  if (!(c.saliency.fraction > 0.0 && c.saliency.fraction <= 1.0)) bad_config("saliency", "fraction must lie in (0, 1]");
}

// ---------------------------------------------------------------------------
// Stages and seeds

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Synth: return "synth";
    case Stage::Split: return "split";
    case Stage::TrainT1w: return "train_t1w";
    case Stage::TrainAicbv: return "train_aicbv";
    case Stage::Predict: return "predict";
    case Stage::Ensemble: return "ensemble";
    case Stage::Report: return "report";
    case Stage::Gradcam: return "gradcam";
  }
  return "?";
}

Stage train_stage(Modality m) { return m == Modality::T1w ? Stage::TrainT1w : Stage::TrainAicbv; }

namespace {

std::string command_for(Stage s) {
  switch (s) {
    case Stage::TrainT1w: return "brainage train --modality t1w";
    case Stage::TrainAicbv: return "brainage train --modality aicbv";
    default: return "brainage " + std::string(to_string(s));
  }
}

std::uint64_t section_hash(const json& j) { return fnv1a64(j.dump()); }

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string mod_tag(Modality m) { return m == Modality::T1w ? "t1w" : "aicbv"; }

}  // namespace

std::uint64_t stage_hash(const RunConfig& cfg, Stage s) {
  const json j = to_json(cfg);
  auto chain = [](std::uint64_t parent, const json& section) { return derive_seed(parent, section_hash(section)); };
  switch (s) {
    case Stage::Synth: return chain(fnv1a64("synth"), json{{"seed", cfg.seed}, {"phantom", j["phantom"]}});
    case Stage::Split: return chain(stage_hash(cfg, Stage::Synth), j["split"]);
    case Stage::TrainT1w: return chain(stage_hash(cfg, Stage::Split), j["train_t1w"]);
    case Stage::TrainAicbv: return chain(stage_hash(cfg, Stage::Split), j["train_aicbv"]);
    case Stage::Predict:
      return derive_seed(stage_hash(cfg, Stage::TrainT1w), stage_hash(cfg, Stage::TrainAicbv));
    case Stage::Ensemble: return chain(stage_hash(cfg, Stage::Predict), j["ensemble"]);
    case Stage::Report: return chain(stage_hash(cfg, Stage::Ensemble), json("report"));
    case Stage::Gradcam: return chain(stage_hash(cfg, Stage::Predict), j["saliency"]);
  }
  return 0;
}

PhantomSpec phantom_spec(const RunConfig& cfg) {
  PhantomSpec p = cfg.phantom;
  p.seed = derive_seed(cfg.seed, "phantom");
  return p;
}

std::uint64_t split_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "split"); }

TrainConfig train_config(const RunConfig& cfg, Modality m) {
  const TrainSection& t = m == Modality::T1w ? cfg.train_t1w : cfg.train_aicbv;
  TrainConfig tc;
  tc.lr = t.lr;
  tc.batch_size = t.batch_size;
  tc.max_epochs = t.max_epochs;
  tc.patience = t.patience;
  tc.min_improvement = t.min_improvement;
  tc.seed = derive_seed(cfg.seed, "train_" + mod_tag(m));
  return tc;
}

Vgg8Config model_config(const RunConfig& cfg, Modality m) {
  const TrainSection& t = m == Modality::T1w ? cfg.train_t1w : cfg.train_aicbv;
  return {t.input_edge, derive_seed(cfg.seed, "init_" + mod_tag(m))};
}

std::string error_json(const std::exception& e) {
  json j;
  if (const auto* se = dynamic_cast<const StageError*>(&e)) {
    j["error"] = std::string(brainage::to_string(se->code()));
    j["stage"] = std::string(to_string(se->stage()));
    j["message"] = se->message();
  } else if (const auto* be = dynamic_cast<const Error*>(&e)) {
    j["error"] = std::string(brainage::to_string(be->code()));
    j["message"] = be->message();
  } else {
    j["error"] = "Internal";
    j["message"] = e.what();
  }
  return j.dump();
}

fs::path Layout::checkpoint(Modality m) const { return checkpoints() / (mod_tag(m) + ".ckpt"); }
fs::path Layout::history(Modality m) const { return checkpoints() / (mod_tag(m) + "_history.csv"); }

fs::path Layout::stamp(Stage s) const {
  const std::string name = "stage_" + std::string(to_string(s)) + ".json";
  switch (s) {
    case Stage::Synth: return volumes() / name;
    case Stage::Split: return splits() / name;
    case Stage::TrainT1w:
    case Stage::TrainAicbv: return checkpoints() / name;
    case Stage::Predict: return predictions() / name;
    case Stage::Ensemble:
    case Stage::Report: return reports() / name;
    case Stage::Gradcam: return saliency() / name;
  }
  return root / name;
}

// ---------------------------------------------------------------------------
// Stage plumbing

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + p.string());
  f << text;
  if (!f) throw Error(ErrorCode::Io, "write failed for " + p.string());
}

/// Checks the upstream stage finished under the current config and that
/// the named outputs are still present.
void require(const Context& ctx, Stage s, std::initializer_list<fs::path> outputs = {}) {
  const Layout L = ctx.layout();
  const fs::path stamp = L.stamp(s);
  const std::string run = "; run `" + command_for(s) + "` first";
  if (!fs::exists(stamp)) {
    throw StageError(ErrorCode::MissingStageInput, s,
                     "stage '" + std::string(to_string(s)) + "' has no outputs under " + L.root.string() + run);
  }
  std::string recorded;
  try {
    recorded = json::parse(read_text(stamp)).at("hash").get<std::string>();
  } catch (const json::exception&) {
    throw StageError(ErrorCode::StaleStageInput, s, "stage '" + std::string(to_string(s)) + "' stamp is unreadable" + run);
  }
  if (recorded != hex(stage_hash(ctx.cfg, s))) {
    throw StageError(ErrorCode::StaleStageInput, s,
                     "stage '" + std::string(to_string(s)) + "' outputs were made with a different config" + run);
  }
  for (const auto& out : outputs) {
    if (!fs::exists(out)) {
      throw StageError(ErrorCode::MissingStageInput, s,
                       "stage '" + std::string(to_string(s)) + "' output " + out.string() + " is missing" + run);
    }
  }
}

void stamp(const Context& ctx, Stage s, json extra = json::object()) {
  extra["stage"] = std::string(to_string(s));
  extra["hash"] = hex(stage_hash(ctx.cfg, s));
  extra["seed"] = ctx.cfg.seed;
  write_text(ctx.layout().stamp(s), extra.dump(2) + "\n");
}

struct Inputs {
  Manifest manifest;
  SplitAssignment split;
};

Inputs load_split_inputs(const Context& ctx) {
  const Layout L = ctx.layout();
  require(ctx, Stage::Synth, {L.manifest()});
  require(ctx, Stage::Split, {L.split_file()});
  return {load_manifest(L.manifest()), split_from_json(read_text(L.split_file()))};
}

Volume load_scan(const Layout& L, const ScanRecord& r, Modality m) {
  return load_nifti(L.volumes() / (m == Modality::T1w ? r.t1w_path : r.aicbv_path));
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

void cmd_synth(const Context& ctx) {
  const Layout L = ctx.layout();
  fs::create_directories(L.volumes());
  const PhantomSpec spec = phantom_spec(ctx.cfg);
  ctx.info("synth: " + std::to_string(spec.count) + " phantoms at " + std::to_string(spec.grid) + "^3");
  const Manifest m = synth_phantoms(spec, L.volumes());
  stamp(ctx, Stage::Synth, {{"records", m.size()}});
}

void cmd_split(const Context& ctx) {
  const Layout L = ctx.layout();
  require(ctx, Stage::Synth, {L.manifest()});
  const Manifest m = load_manifest(L.manifest());
  const SplitAssignment s = split_manifest(m, split_seed(ctx.cfg), ctx.cfg.split.order);
  fs::create_directories(L.splits());
  write_text(L.split_file(), split_to_json(s));

  json kl = json::array();
  for (double v : s.kl) kl.push_back(v);
  ctx.info("split: validation partition " + std::to_string(s.validation_partition) + ", test partition " +
           std::to_string(s.test_partition));
  stamp(ctx, Stage::Split,
        {{"validation_partition", s.validation_partition}, {"test_partition", s.test_partition}, {"kl", kl}});
}

void cmd_train(const Context& ctx, Modality m) {
  const Layout L = ctx.layout();
  const Inputs in = load_split_inputs(ctx);
  const Vgg8Config mc = model_config(ctx.cfg, m);
  const TrainConfig tc = train_config(ctx.cfg, m);

  std::vector<Sample> train_set, val_set;
  for (const auto& r : in.manifest.records) {
    const Role role = in.split.role_of(r.id);
    if (role == Role::Test) continue;
    (role == Role::Train ? train_set : val_set).push_back(make_sample(load_scan(L, r, m), r.age, mc.input_edge));
  }
  if (train_set.empty() || val_set.empty()) {
    throw Error(ErrorCode::EmptySplit, "training needs nonempty train and validation partitions");
  }
  const std::string tag = mod_tag(m);
  ctx.info("train " + tag + ": " + std::to_string(train_set.size()) + " train, " +
           std::to_string(val_set.size()) + " validation samples");

  Vgg8 model(mc);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& rec, const Vgg8&) {
    ctx.info("train " + tag + " epoch " + std::to_string(rec.epoch) + ": train_mae " + fmt(rec.train_mae) +
             ", val_mae " + fmt(rec.val_mae));
  };
  const TrainResult res = train(model, train_set, val_set, tc, hooks);

  fs::create_directories(L.checkpoints());
  save_checkpoint(res.best, L.checkpoint(m));
  write_text(L.history(m), history_to_csv(res.history));
  ctx.info("train " + tag + ": best epoch " + std::to_string(res.best_epoch) + ", val_mae " + fmt(res.best_val_mae));
  stamp(ctx, train_stage(m),
        {{"best_epoch", res.best_epoch}, {"best_val_mae", res.best_val_mae}, {"epochs_run", res.history.size()}});
}

void cmd_predict(const Context& ctx) {
  const Layout L = ctx.layout();
  const Inputs in = load_split_inputs(ctx);
  require(ctx, Stage::TrainT1w, {L.checkpoint(Modality::T1w)});
  require(ctx, Stage::TrainAicbv, {L.checkpoint(Modality::AICBV)});

  stats::PredictionTable table;
  for (const auto& r : in.manifest.records) {
    stats::PredictionRow row;
    row.record_id = r.id;
    row.actual_age = r.age;
    row.sex = r.sex;
    row.project = r.project;
    row.role = in.split.role_of(r.id);
    table.rows.push_back(row);
  }
  for (Modality m : {Modality::T1w, Modality::AICBV}) {
    Vgg8 model = Vgg8::from_checkpoint(load_checkpoint(L.checkpoint(m)));
    const std::size_t edge = model.config().input_edge;
    std::vector<Sample> samples;
    for (const auto& r : in.manifest.records) samples.push_back(make_sample(load_scan(L, r, m), r.age, edge));
    const auto preds = predict(model, samples);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      (m == Modality::T1w ? table.rows[i].t1w_pred : table.rows[i].aicbv_pred) = preds[i];
    }
    ctx.info("predict " + mod_tag(m) + ": " + std::to_string(preds.size()) + " records");
  }
  fs::create_directories(L.predictions());
  write_text(L.prediction_csv(), stats::table_to_csv(table));
  stamp(ctx, Stage::Predict, {{"records", table.rows.size()}});
}

void cmd_ensemble(const Context& ctx) {
  const Layout L = ctx.layout();
  require(ctx, Stage::Predict, {L.prediction_csv()});
  const auto table = stats::table_from_csv(read_text(L.prediction_csv()));
  const auto report = stats::build_ensembles(table);
  fs::create_directories(L.reports());
  write_text(L.metrics_json(), stats::report_to_json(report, table));
  for (const auto& m : report.models) {
    ctx.info("ensemble " + m.name + ": test MAE " + fmt(m.test_metrics.mae, "%.3f") + ", R^2 " +
             fmt(m.test_metrics.r2, "%.3f"));
  }
  stamp(ctx, Stage::Ensemble, {{"degraded", report.degraded}});
}

void cmd_report(const Context& ctx) {
  const Layout L = ctx.layout();
  require(ctx, Stage::Predict, {L.prediction_csv()});
  require(ctx, Stage::Ensemble, {L.metrics_json()});
  const auto table = stats::table_from_csv(read_text(L.prediction_csv()));
  const auto report = stats::build_ensembles(table);
  write_text(L.reports() / "table1.txt", stats::report_to_text(report));
  write_text(L.reports() / "by_age_group.csv", stats::age_groups_to_csv(report, table));
  write_text(L.reports() / "by_project.csv", stats::projects_to_csv(report, table));
  ctx.info("report: wrote table1.txt, by_age_group.csv, by_project.csv");
  stamp(ctx, Stage::Report);
}

void cmd_gradcam(const Context& ctx) {
  const Layout L = ctx.layout();
  const Inputs in = load_split_inputs(ctx);
  require(ctx, Stage::TrainT1w, {L.checkpoint(Modality::T1w)});
  require(ctx, Stage::TrainAicbv, {L.checkpoint(Modality::AICBV)});
  require(ctx, Stage::Predict, {L.prediction_csv()});
  fs::create_directories(L.saliency());

  std::vector<const ScanRecord*> test;
  for (const auto& r : in.manifest.records) {
    if (in.split.role_of(r.id) == Role::Test) test.push_back(&r);
  }
  if (test.empty()) throw Error(ErrorCode::EmptySplit, "no test records for saliency");

  json index = json::array();
  for (Modality m : {Modality::T1w, Modality::AICBV}) {
    Vgg8 model = Vgg8::from_checkpoint(load_checkpoint(L.checkpoint(m)));
    const std::size_t edge = model.config().input_edge;
    const Dims dims = Dims::cube(edge);

    // decade -> (summed gradient map, T1w backgrounds, ages)
    struct Group {
      std::vector<double> grad_sum;
      std::vector<Volume> backgrounds;
      std::vector<double> ages;
    };
    std::map<int, Group> groups;
    for (const ScanRecord* r : test) {
      const int decade = static_cast<int>(std::floor(r->age / 10.0));
      Group& g = groups[decade];
      const Sample s = make_sample(load_scan(L, *r, m), r->age, edge);
      const GradMap gm = input_layer_gradients(model, s.voxels, m, ctx.cfg.saliency.reduction);
      if (g.grad_sum.empty()) g.grad_sum.assign(gm.values.size(), 0.0);
      for (std::size_t i = 0; i < gm.values.size(); ++i) g.grad_sum[i] += gm.values[i];
      const Sample bg = make_sample(load_scan(L, *r, Modality::T1w), r->age, edge);
      g.backgrounds.emplace_back(dims, bg.voxels);
      g.ages.push_back(r->age);
    }

    for (const auto& [decade, g] : groups) {
      GradMap mean;
      mean.dims = dims;
      mean.modality = m;
      mean.values.resize(g.grad_sum.size());
      for (std::size_t i = 0; i < g.grad_sum.size(); ++i) {
        mean.values[i] = static_cast<float>(g.grad_sum[i] / static_cast<double>(g.ages.size()));
      }
      const SaliencyMask mask = top_fraction_mask(mean, ctx.cfg.saliency.fraction);
      const SliceIndices idx = select_slices(mask);
      const Volume background = group_average_background(g.backgrounds, g.ages, decade);

      for (Axis axis : {Axis::Axial, Axis::Coronal, Axis::Sagittal}) {
        const std::size_t slice = idx.of(axis);
        const Slice2D bg = extract_slice(background, axis, slice);
        const auto ppm = render_overlay(bg, extract_mask_slice(mask, axis, slice));
        const std::string stem = mod_tag(m) + "_age" + std::to_string(decade * 10) + "_" + std::string(to_string(axis));
        write_bytes(L.saliency() / (stem + ".ppm"), ppm);
        const json sidecar = {{"image", stem + ".ppm"},
                              {"modality", std::string(to_string(m))},
                              {"decade", {decade * 10, decade * 10 + 10}},
                              {"axis", std::string(to_string(axis))},
                              {"slice_index", slice},
                              {"kept_count", mask.kept_count},
                              {"fraction", ctx.cfg.saliency.fraction},
                              {"reduction", std::string(to_string(ctx.cfg.saliency.reduction))},
                              {"n_volumes", g.ages.size()},
                              {"rows", bg.rows},
                              {"cols", bg.cols}};
        write_text(L.saliency() / (stem + ".json"), sidecar.dump(2) + "\n");
        index.push_back(sidecar);
      }
    }
    ctx.info("gradcam " + mod_tag(m) + ": " + std::to_string(groups.size()) + " age groups");
  }
  write_text(L.saliency() / "index.json", index.dump(2) + "\n");
  stamp(ctx, Stage::Gradcam, {{"images", index.size()}});
}

void cmd_all(const Context& ctx) {
  fs::create_directories(ctx.layout().root);
  write_text(ctx.layout().root / "config.json", config_to_json(ctx.cfg));
  cmd_synth(ctx);
  cmd_split(ctx);
  cmd_train(ctx, Modality::T1w);
  cmd_train(ctx, Modality::AICBV);
  cmd_predict(ctx);
  cmd_ensemble(ctx);
  cmd_report(ctx);
  cmd_gradcam(ctx);
}

}  // namespace brainage::pipeline
