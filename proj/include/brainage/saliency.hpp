#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "brainage/imaging.hpp"
#include "brainage/vgg8.hpp"

namespace brainage {

/// How per-channel gradients collapse to one magnitude per voxel.
enum class GradReduction {
  Magnitude,  // L2 norm of the raw gradient
  Positive,   // L2 norm of max(grad, 0)
};

std::string_view to_string(GradReduction r);
GradReduction parse_grad_reduction(std::string_view s);

/// Non-negative field at input resolution, x fastest.
struct GradMap {
  Dims dims;
  std::vector<float> values;
  Modality modality = Modality::T1w;
};

/// Gradient of the predicted age with respect to the block-5 conv output,
/// reduced across channels and trilinearly upsampled to the input cube.
/// `voxels` is an already normalized, cube-shaped input.
GradMap input_layer_gradients(Vgg8& model, std::span<const float> voxels, Modality modality,
                              GradReduction reduction = GradReduction::Magnitude);

/// Rebuilds the model and preprocesses the volume like training does.
/// Throws ShapeMismatch unless the volume is the model's input cube.
GradMap input_layer_gradients(const Checkpoint& checkpoint, const Volume& volume,
                              GradReduction reduction = GradReduction::Magnitude);

/// Half-pixel-centre trilinear resampling of an edge^3 field to out^3,
/// clamped at the borders.
std::vector<float> upsample_trilinear(std::span<const float> coarse, std::size_t edge,
                                      std::size_t out);

struct SaliencyMask {
  Dims dims;
  std::vector<std::uint8_t> keep;
  std::size_t kept_count = 0;
};

/// Keeps the k = ceil(fraction * N) largest values; among equal values the
/// lower linear index wins. Throws DomainError unless 0 < fraction <= 1.
SaliencyMask top_fraction_mask(const GradMap& map, double fraction = 0.2);

std::size_t kept_count_for(std::size_t n, double fraction);

/// Share of masked map mass that falls inside `region` (a 0/1 field).
double masked_mass_fraction(const GradMap& map, const SaliencyMask& mask,
                            std::span<const std::uint8_t> region);

enum class Axis { Axial, Coronal, Sagittal };

std::string_view to_string(Axis a);

struct SliceIndices {
  std::size_t axial = 0;     // z
  std::size_t coronal = 0;   // y
  std::size_t sagittal = 0;  // x

  std::size_t of(Axis a) const noexcept {
    return a == Axis::Axial ? axial : a == Axis::Coronal ? coronal : sagittal;
  }
  bool operator==(const SliceIndices&) const = default;
};

/// Per axis, the slice with the most masked voxels; ties go to the lowest
/// index.
SliceIndices select_slices(const SaliencyMask& mask);

/// Voxelwise mean of the volumes whose age lies in [10k, 10k + 10).
/// Throws InvalidRecord if none qualify and ShapeMismatch on mixed dims.
Volume group_average_background(std::span<const Volume> volumes, std::span<const double> ages,
                                int decade);

/// Axial: rows y, cols x. Coronal: rows z, cols x. Sagittal: rows z, cols y.
struct Slice2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
};

Slice2D extract_slice(std::span<const float> field, const Dims& dims, Axis axis, std::size_t index);
Slice2D extract_slice(const Volume& v, Axis axis, std::size_t index);
Slice2D extract_mask_slice(const SaliencyMask& mask, Axis axis, std::size_t index);

/// Binary P6 image. Background is min-max scaled to 0..255 (0 if flat);
/// masked pixels become round(0.4 * gray + 0.6 * (255, 0, 0)).
std::vector<std::uint8_t> render_overlay(const Slice2D& background, const Slice2D& mask);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace brainage
