#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "brainage/imaging.hpp"
#include "brainage/rng.hpp"

namespace brainage {

enum class Sex : int { Female = 0, Male = 1 };

struct ScanRecord {
  std::string id;
  double age = 0.0;
  Sex sex = Sex::Female;
  std::string project;
  std::string t1w_path;
  std::string aicbv_path;

  bool operator==(const ScanRecord&) const = default;
};

struct Manifest {
  std::vector<ScanRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool operator==(const Manifest&) const = default;
};

/// Checks ids are unique, ages lie in (0, 130) and the manifest is nonempty.
void validate(const Manifest& m);

/// JSON array of {id, age, sex: "F"|"M", project, t1w, aicbv}.
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

struct Normalized {
  Volume volume;
  double divisor = 0.0;
};

/// Divides every voxel by the mean of the k = max(1, ceil(fraction * N))
/// largest voxel values, background included. Throws ZeroDivisor when that
/// mean is not positive.
Normalized normalize_top_percent(const Volume& v, double fraction = 0.01);

/// Mean of the k largest values, summed in descending order in double.
double top_k_mean(std::span<const float> values, std::size_t k);

struct ProjectProfile {
  std::string label;
  double age_low = 0.0;
  double age_high = 0.0;
  double weight = 1.0;
};

struct PhantomSpec {
  std::size_t count = 60;
  std::size_t grid = 32;
  std::uint64_t seed = 0;
  double sigma_modality = 5.0;  // years
  double sex_offset = 2.0;      // years added to the male T1w latent age
  double noise_sigma = 0.05;    // voxel noise
  std::vector<ProjectProfile> project_profiles = default_profiles();

  static std::vector<ProjectProfile> default_profiles();
};

void validate(const PhantomSpec& spec);

/// Ages each modality's image is rendered from.
struct LatentAges {
  double t1w = 0.0;
  double aicbv = 0.0;
};

LatentAges latent_ages(double age, Sex sex, double t1w_noise, double aicbv_noise,
                       double sex_offset);

/// Ventricle radius in normalized [-1, 1] coordinates.
double ventricle_radius(double t1w_age);
/// Peak intensity of the AICBV perfusion blob.
double perfusion_peak(double aicbv_age);

/// T1w phantom: ellipsoid brain (0.8) around a central ventricle (0.1)
/// whose radius grows with age, partial-volume blended at the edges.
Volume render_t1w(std::size_t grid, double t1w_age, double noise_sigma, SplitMix64& noise);
/// AICBV phantom: same brain mask with a lower-center perfusion blob whose
/// peak falls with age.
Volume render_aicbv(std::size_t grid, double aicbv_age, double noise_sigma, SplitMix64& noise);

struct Phantom {
  ScanRecord record;
  LatentAges latent;
  Volume t1w;
  Volume aicbv;
};

/// Deterministic given (spec.seed, index): each record draws from its own
/// streams keyed by seed, index and a purpose tag.
Phantom make_phantom(const PhantomSpec& spec, std::size_t index);

/// Writes <dir>/<id>_t1w.nii, <dir>/<id>_aicbv.nii and <dir>/manifest.json.
/// Manifest paths are relative to `dir`.
Manifest synth_phantoms(const PhantomSpec& spec, const std::filesystem::path& dir);

}  // namespace brainage
