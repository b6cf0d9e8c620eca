// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   brainage_acceptance [--only 1,2,...] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "brainage/dataset.hpp"
#include "brainage/imaging.hpp"
#include "brainage/pipeline.hpp"
#include "brainage/saliency.hpp"
#include "brainage/splitter.hpp"
#include "brainage/stats.hpp"
#include "brainage/vgg8.hpp"
#include "support/gradcases.hpp"
#include "support/oracles.hpp"

using namespace brainage;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-5;
constexpr double kGradBudgetS = 60.0;
constexpr double kOlsRelTol = 1e-8;
constexpr double kOrthoTol = 1e-8;
constexpr double kOlsBudgetS = 10.0;
constexpr double kF27Expected = 0.1211;
constexpr double kF27Tol = 1e-3;
constexpr double kBetaTol = 1e-10;
constexpr double kFtTol = 1e-9;
constexpr double kSplitBudgetS = 5.0;
constexpr double kDivisorTol = 1e-12;
constexpr double kScaleTol = 1e-6;
constexpr double kFullBudgetS = 3600.0;
constexpr double kSmokeBudgetS = 300.0;
constexpr double kSexPMax = 0.05;
constexpr double kModalityPMax = 0.01;
constexpr double kHotspotShareMin = 0.5;
constexpr double kProjectTol = 1e-9;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Collects failed checks with a short reason each.
struct Verdict {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
  bool ok() const { return failures.empty(); }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path source_dir() { return BRAINAGE_SOURCE_DIR; }

// ---------------------------------------------------------------------------

Verdict criterion1() {
  Verdict v;
  const auto t0 = Clock::now();
  std::set<std::string> seen;
  double worst = 0.0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    for (const auto& c : gradcases::all_cases(seed)) {
      seen.insert(c.op);
      worst = std::max(worst, c.result.max_rel_error);
      v.expect(c.result.checked > 0, c.op + ": no entries checked");
      v.expect(c.result.max_rel_error < kGradTol, fmt("%s: max rel error %.3g", c.op.c_str(), c.result.max_rel_error));
    }
  }
  const double t = seconds_since(t0);
  for (const char* op : {"conv3d", "batchnorm3d", "relu", "maxpool3d", "linear", "mae_loss"}) {
    v.expect(seen.count(op) == 1, std::string("missing op ") + op);
  }
  v.expect(t < kGradBudgetS, fmt("runtime %.1f s", t));
  v.note(fmt("worst rel error %.2e over %zu ops, %.1f s", worst, seen.size(), t));
  return v;
}

Verdict criterion2() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 g(202);
  std::normal_distribution<double> n01(0, 1);
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  double worst_rel = 0.0, worst_ortho = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 50;
    std::vector<double> a(n), b(n), y(n);
    std::array<double, 3> beta{};
    for (auto& c : beta) c = (g() & 1 ? 1 : -1) * mag(g);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = n01(g);
      b[i] = 2.0 + n01(g);
      y[i] = beta[0] + beta[1] * a[i] + beta[2] * b[i] + 0.1 * n01(g);
    }
    const std::vector<std::pair<std::string, std::span<const double>>> cols{{"a", a}, {"b", b}};
    const auto d = stats::Design::with_intercept(cols);
    const auto fit = stats::ols_fit(d, y);
    const auto ref = oracle::ols_quad(d.data, y, n, 3);
    for (std::size_t j = 0; j < 3; ++j) {
      worst_rel = std::max(worst_rel, std::abs(fit.coefficients[j] - ref[j]) / std::abs(ref[j]));
    }
    double ynorm = 0.0;
    for (double yi : y) ynorm += yi * yi;
    ynorm = std::sqrt(ynorm);
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += d.at(i, j) * fit.residuals[i];
      worst_ortho = std::max(worst_ortho, std::abs(s) / ynorm);
    }
  }
  const double t = seconds_since(t0);
  v.expect(worst_rel < kOlsRelTol, fmt("coefficient rel error %.3g", worst_rel));
  v.expect(worst_ortho < kOrthoTol, fmt("|X'e|/|y| = %.3g", worst_ortho));
  v.expect(t < kOlsBudgetS, fmt("runtime %.1f s", t));
  v.note(fmt("worst coef rel %.2e, |X'e|/|y| %.2e, %.2f s", worst_rel, worst_ortho, t));
  return v;
}

Verdict criterion3() {
  Verdict v;
  const double pi = std::numbers::pi;
  const double p27 = stats::f_upper_tail(27.0, 1.0, 1.0);
  const double arcsine = 1.0 - 2.0 / pi * std::atan(std::sqrt(27.0));
  v.expect(std::abs(p27 - kF27Expected) <= kF27Tol, fmt("F(1,1) tail at 27 = %.6f", p27));
  v.expect(std::abs(p27 - arcsine) <= kF27Tol, fmt("arcsine form %.6f vs %.6f", arcsine, p27));

  double worst_beta = 0.0;
  for (double x = 0.0; x <= 1.0 + 1e-12; x += 0.03125) {
    const double xc = std::min(x, 1.0);
    for (double b : {0.5, 1.0, 2.0, 3.7, 10.0}) {
      const double closed = 1.0 - std::pow(1.0 - xc, b);
      worst_beta = std::max(worst_beta, std::abs(stats::regularized_incomplete_beta(xc, 1.0, b) - closed));
    }
    const double half = 2.0 / pi * std::asin(std::sqrt(xc));
    worst_beta = std::max(worst_beta, std::abs(stats::regularized_incomplete_beta(xc, 0.5, 0.5) - half));
  }
  v.expect(worst_beta < kBetaTol, fmt("incomplete beta abs error %.3g", worst_beta));

  std::mt19937_64 g(303);
  std::normal_distribution<double> n01(0, 1);
  double worst_f = 0.0, worst_p = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + 10 * static_cast<std::size_t>(trial % 5);
    std::vector<double> a(n), b(n), y(n);
    const double effect = 0.1 * (trial % 7);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = n01(g);
      b[i] = n01(g);
      y[i] = 1.0 + a[i] + effect * b[i] + n01(g);
    }
    const std::vector<std::pair<std::string, std::span<const double>>> rc{{"a", a}};
    const std::vector<std::pair<std::string, std::span<const double>>> fc{{"a", a}, {"b", b}};
    const auto reduced = stats::ols_fit(stats::Design::with_intercept(rc), y);
    const auto full = stats::ols_fit(stats::Design::with_intercept(fc), y);
    const auto an = stats::anova_nested(reduced, full);
    const auto inf = stats::coefficient_inference(full);
    const auto& row = inf.rows.back();
    worst_f = std::max(worst_f, std::abs(an.f - row.t * row.t) / std::max(1.0, an.f));
    worst_p = std::max(worst_p, std::abs(an.p_value - row.p_value));
  }
  v.expect(worst_f < kFtTol, fmt("|F - t^2| rel %.3g", worst_f));
  v.expect(worst_p < kFtTol, fmt("|p_F - p_t| %.3g", worst_p));
  v.note(fmt("F(1,1)@27 tail %.5f, beta err %.1e, F-t^2 %.1e, p diff %.1e", p27, worst_beta, worst_f, worst_p));
  return v;
}

Verdict criterion4() {
  Verdict v;
  PhantomSpec spec;
  spec.count = 1000;
  spec.grid = 8;
  spec.seed = 404;
  Manifest m;
  for (std::size_t i = 0; i < spec.count; ++i) m.records.push_back(make_phantom(spec, i).record);

  const auto t0 = Clock::now();
  std::vector<double> ages;
  for (const auto& r : m.records) ages.push_back(r.age);
  const AgeBins bins = compute_age_bins(ages);
  const Partitions parts = assign_partitions(m, bins, 4040);
  const SplitAssignment s = select_holdouts(m, parts, bins);
  const SplitAssignment again = split_manifest(m, 4040);
  const double t = seconds_since(t0);

  std::vector<int> seen(m.size(), 0);
  for (const auto& p : parts)
    for (std::size_t i : p) ++seen[i];
  v.expect(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }), "partitions are not a disjoint cover");

  std::map<std::pair<std::size_t, std::string>, std::array<std::size_t, kPartitionCount>> strata;
  for (std::size_t p = 0; p < kPartitionCount; ++p)
    for (std::size_t i : parts[p]) ++strata[{bin_index(bins, m.records[i].age), m.records[i].project}][p];
  std::size_t worst_spread = 0;
  for (const auto& [key, counts] : strata) {
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    worst_spread = std::max(worst_spread, *hi - *lo);
  }
  v.expect(worst_spread <= 1, fmt("stratum count spread %zu", worst_spread));

  const auto overall = histogram(bins, ages);
  std::vector<double> brute;
  for (const auto& p : parts) {
    std::vector<std::size_t> h(bins.bin_count(), 0);
    for (std::size_t i : p) ++h[bin_index(bins, m.records[i].age)];
    brute.push_back(oracle::kl(h, overall));
  }
  std::vector<double> sorted = brute;
  std::sort(sorted.begin(), sorted.end());
  v.expect(std::abs(brute[s.validation_partition] - sorted[0]) <= 1e-12 &&
               std::abs(brute[s.test_partition] - sorted[1]) <= 1e-12,
           fmt("holdouts %zu/%zu are not the two smallest KL", s.validation_partition, s.test_partition));
  v.expect(again.partition_of == s.partition_of && again.validation_partition == s.validation_partition &&
               again.test_partition == s.test_partition,
           "same seed gave a different assignment");
  v.expect(t < kSplitBudgetS, fmt("runtime %.2f s", t));
  v.note(fmt("%zu strata, spread %zu, holdout KL %.4f/%.4f, %.2f s", strata.size(), worst_spread,
             brute[s.validation_partition], brute[s.test_partition], t));
  return v;
}

Verdict criterion5() {
  Verdict v;
  std::mt19937_64 g(505);
  std::uniform_int_distribution<std::size_t> edge(4, 24);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  double worst_div = 0.0, worst_eq = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Dims d{edge(g), edge(g), edge(g)};
    std::vector<float> vox(d.count());
    if (trial % 3 == 0) {
      std::exponential_distribution<float> e(1.0f);
      for (auto& x : vox) x = e(g);
    } else {
      std::uniform_real_distribution<float> u(trial % 3 == 1 ? -1.0f : 0.0f, 1.0f);
      for (auto& x : vox) x = u(g);
      vox[g() % vox.size()] = 5.0f;  // keep the top mean positive
    }
    const Volume vol(d, vox);
    const auto norm = normalize_top_percent(vol);
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(vox.size()))));
    const double expect = oracle::top_k_mean_sorted(vox, k);
    worst_div = std::max(worst_div, std::abs(norm.divisor - expect) / std::abs(expect));

    const float c = static_cast<float>(scale(g));
    std::vector<float> scaled(vox);
    for (auto& x : scaled) x *= c;
    const auto ns = normalize_top_percent(Volume(d, scaled));
    for (std::size_t i = 0; i < vox.size(); ++i) {
      const double a = norm.volume.voxels()[i], b = ns.volume.voxels()[i];
      worst_eq = std::max(worst_eq, std::abs(a - b) / std::max(std::abs(a), 1e-6));
    }
  }
  v.expect(worst_div <= kDivisorTol, fmt("divisor rel error %.3g", worst_div));
  v.expect(worst_eq <= kScaleTol, fmt("scale equivariance rel error %.3g", worst_eq));
  v.note(fmt("divisor rel %.1e, equivariance rel %.1e", worst_div, worst_eq));
  return v;
}

pipeline::RunConfig config_at(const std::string& name, const fs::path& out) {
  auto cfg = pipeline::load_config(source_dir() / "configs" / name);
  cfg.paths.out = out;
  return cfg;
}

void fresh(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

Verdict criterion6(const fs::path& work) {
  Verdict v;
  {
    const fs::path dir = work / "smoke";
    fresh(dir);
    const auto t0 = Clock::now();
    try {
      pipeline::cmd_all(pipeline::Context{config_at("smoke.json", dir), {}});
    } catch (const std::exception& e) {
      v.expect(false, std::string("smoke pipeline failed: ") + e.what());
    }
    const double t = seconds_since(t0);
    v.expect(fs::exists(dir / "reports" / "metrics.json"), "smoke run wrote no metrics");
    v.expect(t <= kSmokeBudgetS, fmt("smoke runtime %.0f s", t));
    v.note(fmt("smoke %.0f s", t));
  }

  const fs::path dir = work / "full";
  fresh(dir);
  const auto cfg = config_at("full.json", dir);
  v.expect(cfg.phantom.count == 600 && cfg.phantom.grid == 32 && cfg.phantom.sigma_modality == 5.0 &&
               cfg.phantom.sex_offset == 2.0 && cfg.train_t1w.max_epochs <= 100 && cfg.train_aicbv.max_epochs <= 100,
           "full config does not match the required setup");
  const auto t0 = Clock::now();
  try {
    pipeline::cmd_all(pipeline::Context{cfg, [](std::string_view line) {
                                          if (line.find("best epoch") != std::string_view::npos)
                                            std::printf("    [full] %.*s\n", static_cast<int>(line.size()), line.data());
                                        }});
  } catch (const std::exception& e) {
    v.expect(false, std::string("full pipeline failed: ") + e.what());
    return v;
  }
  const double t = seconds_since(t0);
  v.expect(t <= kFullBudgetS, fmt("full runtime %.0f s", t));

  const json doc = json::parse(slurp(dir / "reports" / "metrics.json"));
  std::map<std::string, json> models;
  for (const auto& mm : doc.at("models")) models[mm.at("name").get<std::string>()] = mm;
  std::map<std::string, double> anova_p;
  for (const auto& a : doc.at("anova")) anova_p[a.at("comparison").get<std::string>()] = a.at("p_value").get<double>();
  if (doc.at("degraded").get<bool>() || !models.count("TA") || !models.count("TAS")) {
    v.expect(false, "ensemble degraded to the T model only");
    return v;
  }
  const double mae_t = models["T"].at("test").at("mae"), mae_a = models["A"].at("test").at("mae"),
               mae_ta = models["TA"].at("test").at("mae");
  double sex_coef = 0.0;
  for (const auto& c : models["TAS"].at("coefficients"))
    if (c.at("name") == "sex") sex_coef = c.at("estimate");
  v.expect(mae_ta < mae_t, fmt("MAE(TA) %.3f >= MAE(T) %.3f", mae_ta, mae_t));
  v.expect(mae_ta < mae_a, fmt("MAE(TA) %.3f >= MAE(A) %.3f", mae_ta, mae_a));
  v.expect(sex_coef < 0.0, fmt("TAS sex coefficient %.3f >= 0", sex_coef));
  v.expect(anova_p["TA vs TAS"] < kSexPMax, fmt("TA vs TAS p = %.3g", anova_p["TA vs TAS"]));
  v.expect(anova_p["T vs TA"] < kModalityPMax, fmt("T vs TA p = %.3g", anova_p["T vs TA"]));
  v.expect(anova_p["A vs TA"] < kModalityPMax, fmt("A vs TA p = %.3g", anova_p["A vs TA"]));
  v.note(fmt("test MAE T %.2f A %.2f TA %.2f; sex %.2f; p T/TA %.1e A/TA %.1e TA/TAS %.3g; n_test %d; full %.0f s",
             mae_t, mae_a, mae_ta, sex_coef, anova_p["T vs TA"], anova_p["A vs TA"], anova_p["TA vs TAS"],
             doc.at("n_test").get<int>(), t));
  return v;
}

// Age is written only into a bright cube inside octant (z, y, x < half);
// everything else is age-independent noise.
Sample hotspot_sample(double age, std::size_t edge, std::mt19937_64& g) {
  std::uniform_real_distribution<float> noise(0.0f, 0.2f);
  Sample s;
  s.age = age;
  s.voxels.resize(edge * edge * edge);
  for (auto& x : s.voxels) x = noise(g);
  const float level = static_cast<float>(0.2 + 0.8 * (age - 20.0) / 60.0);
  const std::size_t lo = edge / 8, hi = edge / 8 + edge / 4;
  for (std::size_t z = lo; z < hi; ++z)
    for (std::size_t y = lo; y < hi; ++y)
      for (std::size_t x = lo; x < hi; ++x) s.voxels[(z * edge + y) * edge + x] = level;
  return s;
}

Verdict criterion7(const fs::path& work) {
  Verdict v;
  std::mt19937_64 g(707);
  std::size_t bad_count = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + g() % 5000;
    const double f = std::uniform_real_distribution<double>(1e-6, 1.0)(g);
    const double fraction = trial == 0 ? 1.0 : f;
    GradMap map;
    map.dims = Dims{1, 1, n};
    map.values.resize(n);
    std::uniform_int_distribution<int> q(0, 20);
    for (auto& x : map.values) x = static_cast<float>(q(g));
    const auto mask = top_fraction_mask(map, fraction);
    std::size_t expect = 0;
    while (static_cast<double>(expect) < fraction * static_cast<double>(n)) ++expect;
    const auto ones = static_cast<std::size_t>(std::count(mask.keep.begin(), mask.keep.end(), 1));
    float min_in = INFINITY, max_out = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.keep[i]) {
        min_in = std::min(min_in, map.values[i]);
      } else {
        max_out = std::max(max_out, map.values[i]);
      }
    }
    if (mask.kept_count != expect || ones != expect || min_in < max_out) ++bad_count;
  }
  v.expect(bad_count == 0, fmt("%zu of 200 masks had the wrong kept count or ordering", bad_count));

  std::size_t nest_violations = 0;
  for (int trial = 0; trial < 20; ++trial) {
    GradMap map;
    map.dims = Dims{8, 8, 8};
    map.values.resize(512);
    std::uniform_int_distribution<int> q(0, 6);
    for (auto& x : map.values) x = static_cast<float>(q(g));
    auto prev = top_fraction_mask(map, 0.01);
    for (int k = 2; k <= 100; ++k) {
      const auto cur = top_fraction_mask(map, k / 100.0);
      for (std::size_t i = 0; i < 512; ++i) nest_violations += prev.keep[i] > cur.keep[i];
      prev = cur;
    }
  }
  v.expect(nest_violations == 0, fmt("%zu monotonicity violations", nest_violations));

  // Overfit a model on the hotspot phantom, then measure where the mask lands.
  const std::size_t edge = 32;
  std::vector<Sample> samples;
  for (int i = 0; i < 9; ++i) samples.push_back(hotspot_sample(20.0 + 7.5 * i, edge, g));
  Vgg8 model(Vgg8Config{edge, 7071});
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.max_epochs = 60;
  tc.patience = 59;
  tc.seed = 7072;
  const auto tr = train(model, samples, samples, tc);
  GradMap avg;
  for (const auto& s : samples) {
    const auto m = input_layer_gradients(model, s.voxels, Modality::T1w);
    if (avg.values.empty()) {
      avg = m;
    } else {
      for (std::size_t i = 0; i < m.values.size(); ++i) avg.values[i] += m.values[i];
    }
  }
  const auto mask = top_fraction_mask(avg, 0.2);
  std::vector<std::uint8_t> octant(avg.values.size(), 0);
  for (std::size_t z = 0; z < edge / 2; ++z)
    for (std::size_t y = 0; y < edge / 2; ++y)
      for (std::size_t x = 0; x < edge / 2; ++x) octant[(z * edge + y) * edge + x] = 1;
  const double share = masked_mass_fraction(avg, mask, octant);
  v.expect(share > kHotspotShareMin, fmt("hotspot octant holds %.3f of the mask mass", share));

  // PPM bytes are stable across reruns of the saliency stage.
  const fs::path dir = work / "ppm";
  fresh(dir);
  std::size_t ppm_count = 0, ppm_diff = 0;
  try {
    auto cfg = config_at("smoke.json", dir);
    const pipeline::Context ctx{cfg, {}};
    pipeline::cmd_all(ctx);
    std::map<fs::path, std::string> first;
    for (const auto& e : fs::directory_iterator(ctx.layout().saliency()))
      if (e.path().extension() == ".ppm") first[e.path()] = slurp(e.path());
    pipeline::cmd_gradcam(ctx);
    for (const auto& [p, bytes] : first) {
      ++ppm_count;
      if (slurp(p) != bytes) ++ppm_diff;
    }
  } catch (const std::exception& e) {
    v.expect(false, std::string("gradcam rerun failed: ") + e.what());
  }
  v.expect(ppm_count > 0, "no PPM images were written");
  v.expect(ppm_diff == 0, fmt("%zu of %zu PPM files changed on rerun", ppm_diff, ppm_count));
  v.note(fmt("hotspot share %.3f (best train MAE %.2f), %zu PPMs identical", share,
             std::min_element(tr.history.begin(), tr.history.end(),
                              [](const auto& a, const auto& b) { return a.train_mae < b.train_mae; })
                 ->train_mae,
             ppm_count - ppm_diff));
  return v;
}

Verdict criterion8(const fs::path& work) {
  Verdict v;
  std::mt19937_64 g(808);
  std::size_t nifti_bad = 0;
  const fs::path dir = work / "formats";
  fresh(dir);
  for (int trial = 0; trial < 50; ++trial) {
    const Dims d{1 + g() % 20, 1 + g() % 20, 1 + g() % 20};
    std::vector<float> vox(d.count());
    std::uniform_real_distribution<float> u(-1e3f, 1e3f);
    for (auto& x : vox) x = trial % 5 == 0 ? std::ldexp(u(g), -40) : u(g);
    Affine aff = identity_affine();
    for (std::size_t i = 0; i < 12; ++i) aff[i] += std::uniform_real_distribution<float>(-0.5f, 0.5f)(g);
    const Volume vol(d, vox, aff, trial % 2 ? Modality::AICBV : Modality::T1w);
    const fs::path p = dir / fmt("v%02d.nii", trial);
    save_nifti(vol, p);
    const Volume back = load_nifti(p);
    const Volume mem = read_nifti(write_nifti(vol));
    const bool same = back.dims() == d && back.voxels().size() == vox.size() &&
                      std::memcmp(back.voxels().data(), vox.data(), vox.size() * sizeof(float)) == 0 &&
                      back.affine() == vol.affine() && mem == back;
    if (!same) ++nifti_bad;
  }
  v.expect(nifti_bad == 0, fmt("%zu of 50 NIfTI round trips differ", nifti_bad));

  PhantomSpec spec;
  spec.count = 4;
  spec.seed = 81;
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const Phantom ph = make_phantom(spec, i);
    samples.push_back(make_sample(ph.aicbv, ph.record.age, 32));
  }
  Vgg8 m(Vgg8Config{32, 82});
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.patience = 1;
  train(m, samples, samples, tc);
  const auto before = predict(m, samples);
  save_checkpoint(m.to_checkpoint(), dir / "m.ckpt");
  Vgg8 loaded = Vgg8::from_checkpoint(load_checkpoint(dir / "m.ckpt"));
  const auto after = predict(loaded, samples);
  v.expect(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0,
           "checkpoint reload changed predictions");

  std::string first, second;
  try {
    for (const char* tag : {"rerun_a", "rerun_b"}) {
      const fs::path out = work / tag;
      fresh(out);
      pipeline::cmd_all(pipeline::Context{config_at("smoke.json", out), {}});
      (first.empty() ? first : second) = slurp(out / "reports" / "metrics.json");
    }
  } catch (const std::exception& e) {
    v.expect(false, std::string("pipeline rerun failed: ") + e.what());
  }
  v.expect(!first.empty() && first == second, "metrics JSON differs between identical runs");
  v.note(fmt("50 NIfTI round trips, checkpoint reload, metrics.json %zu bytes identical", first.size()));
  return v;
}

Verdict criterion9() {
  Verdict v;
  // |error| = 2, 0, 3, 0, 1, 1
  const std::vector<double> actual{20.0, 24.9, 25.0, 29.99, 30.0, 41.0};
  const std::vector<double> pred{22.0, 24.9, 28.0, 29.99, 31.0, 40.0};
  const std::vector<stats::AgeGroupRow> expect{{20, 25, 2, 1.0}, {25, 30, 2, 1.5}, {30, 35, 1, 1.0}, {40, 45, 1, 1.0}};
  const auto rows = stats::report_by_age_group(actual, pred, 5.0);
  bool exact = rows.size() == expect.size();
  for (std::size_t i = 0; exact && i < rows.size(); ++i) {
    exact = rows[i].lo == expect[i].lo && rows[i].hi == expect[i].hi && rows[i].n == expect[i].n &&
            rows[i].mae == expect[i].mae;
  }
  v.expect(exact, "age-group fixture mismatch");

  std::mt19937_64 g(909);
  std::uniform_real_distribution<double> age(10, 90);
  std::normal_distribution<double> err(0, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 50 + 25 * static_cast<std::size_t>(trial);
    std::vector<double> a(n), p(n);
    std::vector<std::string> proj(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = age(g);
      p[i] = a[i] + err(g);
      proj[i] = "P" + std::to_string(g() % 7);
    }
    const auto by = stats::report_by_project(proj, a, p);
    double weighted = 0.0;
    std::size_t total = 0;
    for (const auto& r : by) {
      weighted += static_cast<double>(r.n) * r.mae;
      total += r.n;
    }
    v.expect(total == n, "per-project counts do not cover the records");
    worst = std::max(worst, std::abs(weighted / static_cast<double>(total) - stats::mean_absolute_error(p, a)));
  }
  v.expect(worst <= kProjectTol, fmt("per-project weighted MAE off by %.3g", worst));
  v.note(fmt("fixture exact, project weighting error %.1e", worst));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"brainage acceptance criteria"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "brainage_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--work", work, "Scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);

  const fs::path wd = work;
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, [&] { return criterion6(wd); }},
      {7, [&] { return criterion7(wd); }},
      {8, [&] { return criterion8(wd); }},
      {9, criterion9},
  };

  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.expect(false, std::string("exception: ") + e.what());
    }
    std::printf("criterion %d: %s", id, v.ok() ? "PASS" : "FAIL");
    for (const auto& n : v.notes) std::printf("  %s", n.c_str());
    std::printf("\n");
    for (const auto& f : v.failures) std::printf("    - %s\n", f.c_str());
    std::fflush(stdout);
    failed += !v.ok();
  }
  return failed == 0 ? 0 : 1;
}
