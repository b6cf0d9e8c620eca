#include "brainage/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "brainage/error.hpp"

namespace brainage {

using nlohmann::json;

void validate(const Manifest& m) {
  if (m.records.empty()) throw Error(ErrorCode::EmptyManifest, "manifest has no records");
  std::set<std::string> seen;
  for (const auto& r : m.records) {
    if (!seen.insert(r.id).second) throw Error(ErrorCode::DuplicateId, "duplicate id '" + r.id + "'");
    if (!std::isfinite(r.age) || r.age <= 0.0 || r.age >= 130.0) {
      throw Error(ErrorCode::InvalidRecord, "record '" + r.id + "' has age outside (0, 130)");
    }
    if (r.sex != Sex::Female && r.sex != Sex::Male) {
      throw Error(ErrorCode::BadSexCode, "record '" + r.id + "' has a sex code outside {0,1}");
    }
  }
}

std::string manifest_to_json(const Manifest& m) {
  json arr = json::array();
  for (const auto& r : m.records) {
    arr.push_back(json{{"id", r.id},
                       {"age", r.age},
                       {"sex", r.sex == Sex::Male ? "M" : "F"},
                       {"project", r.project},
                       {"t1w", r.t1w_path},
                       {"aicbv", r.aicbv_path}});
  }
  return arr.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidRecord, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::InvalidRecord, "manifest must be a JSON array");

  Manifest m;
  for (const auto& item : doc) {
    for (const char* key : {"id", "age", "sex", "project", "t1w", "aicbv"}) {
      if (!item.contains(key)) {
        throw Error(ErrorCode::MissingField, std::string("record lacks field '") + key + "'");
      }
    }
    ScanRecord r;
    try {
      r.id = item.at("id").get<std::string>();
      r.age = item.at("age").get<double>();
      r.project = item.at("project").get<std::string>();
      r.t1w_path = item.at("t1w").get<std::string>();
      r.aicbv_path = item.at("aicbv").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidRecord, std::string("bad field type: ") + e.what());
    }
    const auto& sex = item.at("sex");
    if (sex == "F") {
      r.sex = Sex::Female;
    } else if (sex == "M") {
      r.sex = Sex::Male;
    } else {
      throw Error(ErrorCode::BadSexCode, "record '" + r.id + "' has sex " + sex.dump());
    }
    m.records.push_back(std::move(r));
  }
  validate(m);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  validate(m);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << manifest_to_json(m);
}

double top_k_mean(std::span<const float> values, std::size_t k) {
  std::vector<float> work(values.begin(), values.end());
  k = std::min(k, work.size());
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(k - 1), work.end(),
                   std::greater<>());
  std::sort(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(k), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += work[i];
  return sum / static_cast<double>(k);
}

Normalized normalize_top_percent(const Volume& v, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::DomainError, "fraction must lie in (0, 1]");
  }
  const auto voxels = v.voxels();
  const std::size_t n = voxels.size();
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  const double divisor = top_k_mean(voxels, k);
  if (!(divisor > 0.0)) {
    throw Error(ErrorCode::ZeroDivisor, "mean of the top values is not positive");
  }
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(static_cast<double>(voxels[i]) / divisor);
  }
  return {Volume(v.dims(), std::move(out), v.affine(), v.modality()), divisor};
}

// ---------------------------------------------------------------------------
// Phantoms

std::vector<ProjectProfile> PhantomSpec::default_profiles() {
  return {{"lifespan", 10.0, 95.0, 0.40},
          {"young_adult", 18.0, 35.0, 0.20},
          {"midlife", 35.0, 65.0, 0.15},
          {"aging", 55.0, 90.0, 0.25}};
}

void validate(const PhantomSpec& spec) {
  if (spec.count == 0) throw Error(ErrorCode::ConfigInvalid, "phantom count must be positive");
  if (spec.grid < 4) throw Error(ErrorCode::ConfigInvalid, "phantom grid must be >= 4");
  if (spec.sigma_modality < 0.0 || spec.noise_sigma < 0.0) {
    throw Error(ErrorCode::ConfigInvalid, "noise levels must be non-negative");
  }
  if (spec.project_profiles.empty()) {
    throw Error(ErrorCode::ConfigInvalid, "at least one project profile is required");
  }
  for (const auto& p : spec.project_profiles) {
    if (!(p.age_low < p.age_high) || p.age_low <= 0.0 || p.age_high >= 130.0) {
      throw Error(ErrorCode::ConfigInvalid, "project '" + p.label + "' has a bad age range");
    }
    if (!(p.weight > 0.0)) {
      throw Error(ErrorCode::ConfigInvalid, "project '" + p.label + "' needs positive weight");
    }
  }
}

LatentAges latent_ages(double age, Sex sex, double t1w_noise, double aicbv_noise,
                       double sex_offset) {
  return {age + t1w_noise + sex_offset * static_cast<int>(sex), age + aicbv_noise};
}

double ventricle_radius(double t1w_age) { return 0.08 + 0.004 * (t1w_age - 10.0); }

double perfusion_peak(double aicbv_age) { return 0.9 - 0.006 * (aicbv_age - 10.0); }

namespace {

constexpr double kTissue = 0.8;
constexpr double kVentricle = 0.1;
constexpr double kPerfusionBase = 0.3;
constexpr double kBlobWidth = 0.2;
constexpr double kBlobCenterZ = -0.3;
constexpr double kBrainAxes[3] = {0.72, 0.88, 0.78};  // (z, y, x) semi-axes

double coord(std::size_t i, std::size_t grid) {
  return 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(grid) - 1.0;
}

// Fraction of a voxel inside a surface at signed distance `d` (negative
// inside), with a one-voxel linear ramp.
double occupancy(double d, double voxel) { return std::clamp(0.5 - d / voxel, 0.0, 1.0); }

double brain_occupancy(double z, double y, double x, double voxel) {
  const double rho = std::sqrt((z / kBrainAxes[0]) * (z / kBrainAxes[0]) +
                               (y / kBrainAxes[1]) * (y / kBrainAxes[1]) +
                               (x / kBrainAxes[2]) * (x / kBrainAxes[2]));
  return occupancy((rho - 1.0) * kBrainAxes[0], voxel);
}

Affine phantom_affine(std::size_t grid) {
  // 2 mm voxels centred on the origin.
  Affine a = identity_affine();
  const float half = static_cast<float>(grid) - 1.0f;
  for (std::size_t r = 0; r < 3; ++r) {
    a[r * 4 + r] = 2.0f;
    a[r * 4 + 3] = -half;
  }
  return a;
}

template <typename F>
Volume render(std::size_t grid, Modality modality, double noise_sigma, SplitMix64& noise,
              F&& intensity) {
  const double voxel = 2.0 / static_cast<double>(grid);
  std::vector<float> out(grid * grid * grid);
  std::size_t i = 0;
  for (std::size_t z = 0; z < grid; ++z) {
    for (std::size_t y = 0; y < grid; ++y) {
      for (std::size_t x = 0; x < grid; ++x, ++i) {
        const double cz = coord(z, grid), cy = coord(y, grid), cx = coord(x, grid);
        double v = intensity(cz, cy, cx, voxel);
        // Noise is drawn for every voxel so streams stay aligned whatever
        // the signal looks like.
        const double e = noise.gaussian();
        v += noise_sigma * e;
        out[i] = static_cast<float>(std::max(v, 0.0));
      }
    }
  }
  return Volume(Dims::cube(grid), std::move(out), phantom_affine(grid), modality);
}

}  // namespace

Volume render_t1w(std::size_t grid, double t1w_age, double noise_sigma, SplitMix64& noise) {
  const double radius = std::max(0.0, ventricle_radius(t1w_age));
  return render(grid, Modality::T1w, noise_sigma, noise,
                [radius](double z, double y, double x, double voxel) {
                  const double brain = brain_occupancy(z, y, x, voxel);
                  const double d = std::sqrt(z * z + y * y + x * x);
                  const double vent = radius > 0.0 ? occupancy(d - radius, voxel) : 0.0;
                  return brain * (kTissue * (1.0 - vent) + kVentricle * vent);
                });
}

Volume render_aicbv(std::size_t grid, double aicbv_age, double noise_sigma, SplitMix64& noise) {
  const double peak = perfusion_peak(aicbv_age);
  return render(grid, Modality::AICBV, noise_sigma, noise,
                [peak](double z, double y, double x, double voxel) {
                  const double brain = brain_occupancy(z, y, x, voxel);
                  const double dz = z - kBlobCenterZ;
                  const double d2 = dz * dz + y * y + x * x;
                  const double g = std::exp(-d2 / (2.0 * kBlobWidth * kBlobWidth));
                  return brain * (kPerfusionBase + (peak - kPerfusionBase) * g);
                });
}

Phantom make_phantom(const PhantomSpec& spec, std::size_t index) {
  const std::uint64_t record_seed = derive_seed(spec.seed, index);
  SplitMix64 meta(derive_seed(record_seed, "meta"));
  SplitMix64 latent(derive_seed(record_seed, "latent"));
  SplitMix64 t1w_noise(derive_seed(record_seed, "t1w_noise"));
  SplitMix64 aicbv_noise(derive_seed(record_seed, "aicbv_noise"));

  double total = 0.0;
  for (const auto& p : spec.project_profiles) total += p.weight;
  const double pick = meta.uniform() * total;
  std::size_t project = spec.project_profiles.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.project_profiles.size(); ++i) {
    acc += spec.project_profiles[i].weight;
    if (pick < acc) {
      project = i;
      break;
    }
  }
  const auto& profile = spec.project_profiles[project];
  const double age = meta.uniform(profile.age_low, profile.age_high);
  const Sex sex = meta.uniform() < 0.5 ? Sex::Female : Sex::Male;

  const double u = latent.gaussian(0.0, spec.sigma_modality);
  const double w = latent.gaussian(0.0, spec.sigma_modality);
  const LatentAges ages = latent_ages(age, sex, u, w, spec.sex_offset);

  char id[32];
  std::snprintf(id, sizeof id, "ph%05zu", index);
  ScanRecord record{id, age, sex, profile.label, std::string(id) + "_t1w.nii",
                    std::string(id) + "_aicbv.nii"};
  return {std::move(record), ages,
          render_t1w(spec.grid, ages.t1w, spec.noise_sigma, t1w_noise),
          render_aicbv(spec.grid, ages.aicbv, spec.noise_sigma, aicbv_noise)};
}

Manifest synth_phantoms(const PhantomSpec& spec, const std::filesystem::path& dir) {
  validate(spec);
  std::filesystem::create_directories(dir);
  Manifest m;
  m.records.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    Phantom p = make_phantom(spec, i);
    save_nifti(p.t1w, dir / p.record.t1w_path);
    save_nifti(p.aicbv, dir / p.record.aicbv_path);
    m.records.push_back(std::move(p.record));
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace brainage
