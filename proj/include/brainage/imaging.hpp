#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace brainage {

enum class Modality { T1w, AICBV };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

/// Voxel counts in (depth, height, width) = (z, y, x) order.
struct Dims {
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const noexcept { return depth * height * width; }
  bool operator==(const Dims&) const = default;

  static Dims cube(std::size_t edge) noexcept { return {edge, edge, edge}; }
};

/// Row-major 4x4 voxel-to-world matrix. Columns 0..2 multiply the voxel
/// index (x, y, z); column 3 is the translation in mm.
using Affine = std::array<float, 16>;

Affine identity_affine() noexcept;

/// One 3D scalar field. Voxels are stored x-fastest: the linear index of
/// (z, y, x) is (z * height + y) * width + x. Immutable once constructed.
class Volume {
 public:
  Volume() = default;
  /// Throws InvalidVolume if the voxel count does not match dims, a voxel
  /// is not finite, or the affine's last row is not (0, 0, 0, 1).
  Volume(Dims dims, std::vector<float> voxels, Affine affine = identity_affine(),
         Modality modality = Modality::T1w);

  const Dims& dims() const noexcept { return dims_; }
  std::span<const float> voxels() const noexcept { return voxels_; }
  const Affine& affine() const noexcept { return affine_; }
  Modality modality() const noexcept { return modality_; }

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * dims_.height + y) * dims_.width + x;
  }
  float at(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return voxels_[index(z, y, x)];
  }

  bool operator==(const Volume&) const = default;

 private:
  Dims dims_{};
  std::vector<float> voxels_;
  Affine affine_ = identity_affine();
  Modality modality_ = Modality::T1w;
};

namespace nifti {
inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;
inline constexpr std::int16_t kUint8 = 2;
inline constexpr std::int16_t kInt16 = 4;
inline constexpr std::int16_t kFloat32 = 16;
}  // namespace nifti

/// Parses an uncompressed single-file NIfTI-1 volume (little-endian,
/// dim[0] == 3, datatype uint8/int16/float32). The modality tag is read
/// back from the descrip field written by write_nifti; other files default
/// to T1w.
Volume read_nifti(std::span<const std::uint8_t> bytes);

/// Emits float32 data at vox_offset 352 with the affine in srow_x/y/z.
std::vector<std::uint8_t> write_nifti(const Volume& v);

Volume load_nifti(const std::filesystem::path& path);
void save_nifti(const Volume& v, const std::filesystem::path& path);

/// Center crop or symmetric zero pad to `target`. For odd differences the
/// extra voxel (kept or padded) sits on the high-index side. The affine
/// translation is updated so retained voxels keep their world coordinates.
Volume crop_or_pad(const Volume& v, Dims target);

}  // namespace brainage
