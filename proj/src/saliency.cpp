#include "brainage/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "brainage/dataset.hpp"
#include "brainage/error.hpp"

namespace brainage {

std::string_view to_string(GradReduction r) {
  return r == GradReduction::Magnitude ? "magnitude" : "positive";
}

GradReduction parse_grad_reduction(std::string_view s) {
  if (s == "magnitude") return GradReduction::Magnitude;
  if (s == "positive") return GradReduction::Positive;
  throw Error(ErrorCode::ConfigInvalid, "gradient reduction must be 'magnitude' or 'positive'");
}

std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::Axial: return "axial";
    case Axis::Coronal: return "coronal";
    case Axis::Sagittal: return "sagittal";
  }
  return "?";
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double t;
};

std::vector<Tap> taps(std::size_t edge, std::size_t out) {
  std::vector<Tap> result(out);
  const double scale = static_cast<double>(edge) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(edge - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, edge - 1);
    result[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return result;
}

}  // namespace

std::vector<float> upsample_trilinear(std::span<const float> coarse, std::size_t edge,
                                      std::size_t out) {
  if (edge == 0 || coarse.size() != edge * edge * edge) {
    throw Error(ErrorCode::ShapeMismatch, "coarse field is not a cube of the stated edge");
  }
  const auto tp = taps(edge, out);
  auto at = [&](std::size_t z, std::size_t y, std::size_t x) {
    return static_cast<double>(coarse[(z * edge + y) * edge + x]);
  };
  std::vector<float> fine(out * out * out);
  for (std::size_t z = 0; z < out; ++z) {
    const Tap& tz = tp[z];
    for (std::size_t y = 0; y < out; ++y) {
      const Tap& ty = tp[y];
      for (std::size_t x = 0; x < out; ++x) {
        const Tap& tx = tp[x];
        auto lerp_x = [&](std::size_t zz, std::size_t yy) {
          return at(zz, yy, tx.i0) * (1.0 - tx.t) + at(zz, yy, tx.i1) * tx.t;
        };
        const double c0 = lerp_x(tz.i0, ty.i0) * (1.0 - ty.t) + lerp_x(tz.i0, ty.i1) * ty.t;
        const double c1 = lerp_x(tz.i1, ty.i0) * (1.0 - ty.t) + lerp_x(tz.i1, ty.i1) * ty.t;
        fine[(z * out + y) * out + x] = static_cast<float>(c0 * (1.0 - tz.t) + c1 * tz.t);
      }
    }
  }
  return fine;
}

GradMap input_layer_gradients(Vgg8& model, std::span<const float> voxels, Modality modality,
                              GradReduction reduction) {
  const std::size_t e = model.config().input_edge;
  if (voxels.size() != e * e * e) {
    throw Error(ErrorCode::ShapeMismatch, "volume does not match the model input cube");
  }
  for (auto& p : model.parameters()) p.zero_grad();
  ag::Tensor<float> input({1, 1, e, e, e}, {voxels.begin(), voxels.end()});
  auto trace = model.forward(input, ag::Mode::Eval);
  trace.output.backward();

  const auto& shape = trace.last_conv.shape();
  const std::size_t channels = shape[1];
  const std::size_t coarse_edge = shape[2];
  const std::size_t spatial = coarse_edge * coarse_edge * coarse_edge;
  const auto grad = trace.last_conv.grad();
  std::vector<float> coarse(spatial, 0.0f);
  if (!grad.empty()) {
    for (std::size_t s = 0; s < spatial; ++s) {
      double acc = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        double g = grad[c * spatial + s];
        if (reduction == GradReduction::Positive) g = std::max(g, 0.0);
        acc += g * g;
      }
      coarse[s] = static_cast<float>(std::sqrt(acc));
    }
  }
  for (auto& p : model.parameters()) p.zero_grad();

  GradMap map;
  map.dims = Dims::cube(e);
  map.values = upsample_trilinear(coarse, coarse_edge, e);
  map.modality = modality;
  return map;
}

GradMap input_layer_gradients(const Checkpoint& checkpoint, const Volume& volume,
                              GradReduction reduction) {
  Vgg8 model = Vgg8::from_checkpoint(checkpoint);
  const std::size_t e = model.config().input_edge;
  if (volume.dims() != Dims::cube(e)) {
    throw Error(ErrorCode::ShapeMismatch, "volume does not match the model input cube");
  }
  const Sample s = make_sample(volume, 0.0, e);
  return input_layer_gradients(model, s.voxels, volume.modality(), reduction);
}

std::size_t kept_count_for(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::DomainError, "mask fraction must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  return std::min(k, n);
}

SaliencyMask top_fraction_mask(const GradMap& map, double fraction) {
  const std::size_t n = map.values.size();
  const std::size_t k = kept_count_for(n, fraction);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const float va = map.values[a], vb = map.values[b];
    return va != vb ? va > vb : a < b;
  };
  if (k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);

  SaliencyMask mask;
  mask.dims = map.dims;
  mask.keep.assign(n, 0);
  for (std::size_t i = 0; i < k; ++i) mask.keep[order[i]] = 1;
  mask.kept_count = k;
  return mask;
}

double masked_mass_fraction(const GradMap& map, const SaliencyMask& mask,
                            std::span<const std::uint8_t> region) {
  if (mask.keep.size() != map.values.size() || region.size() != map.values.size()) {
    throw Error(ErrorCode::ShapeMismatch, "map, mask and region sizes differ");
  }
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (!mask.keep[i]) continue;
    total += map.values[i];
    if (region[i]) inside += map.values[i];
  }
  return total > 0.0 ? inside / total : 0.0;
}

SliceIndices select_slices(const SaliencyMask& mask) {
  const Dims& d = mask.dims;
  std::vector<std::size_t> per_z(d.depth, 0), per_y(d.height, 0), per_x(d.width, 0);
  for (std::size_t z = 0; z < d.depth; ++z) {
    for (std::size_t y = 0; y < d.height; ++y) {
      for (std::size_t x = 0; x < d.width; ++x) {
        if (mask.keep[(z * d.height + y) * d.width + x]) {
          ++per_z[z];
          ++per_y[y];
          ++per_x[x];
        }
      }
    }
  }
  // max_element returns the first maximum.
  auto argmax = [](const std::vector<std::size_t>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  return {argmax(per_z), argmax(per_y), argmax(per_x)};
}

Volume group_average_background(std::span<const Volume> volumes, std::span<const double> ages,
                                int decade) {
  if (volumes.size() != ages.size()) throw Error(ErrorCode::ShapeMismatch, "volumes and ages differ in length");
  const double lo = 10.0 * decade, hi = lo + 10.0;
  std::vector<double> acc;
  std::size_t count = 0;
  const Volume* first = nullptr;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (!(ages[i] >= lo && ages[i] < hi)) continue;
    const Volume& v = volumes[i];
    if (!first) {
      first = &v;
      acc.assign(v.voxels().size(), 0.0);
    } else if (v.dims() != first->dims()) {
      throw Error(ErrorCode::ShapeMismatch, "background volumes have different dims");
    }
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v.voxels()[j];
    ++count;
  }
  if (count == 0) {
    throw Error(ErrorCode::InvalidRecord, "no volumes with age in [" + std::to_string(static_cast<int>(lo)) +
                                              ", " + std::to_string(static_cast<int>(hi)) + ")");
  }
  std::vector<float> mean(acc.size());
  for (std::size_t j = 0; j < acc.size(); ++j) mean[j] = static_cast<float>(acc[j] / static_cast<double>(count));
  return Volume(first->dims(), std::move(mean), first->affine(), first->modality());
}

Slice2D extract_slice(std::span<const float> field, const Dims& d, Axis axis, std::size_t index) {
  if (field.size() != d.count()) throw Error(ErrorCode::ShapeMismatch, "field size does not match dims");
  Slice2D s;
  auto idx = [&](std::size_t z, std::size_t y, std::size_t x) { return (z * d.height + y) * d.width + x; };
  switch (axis) {
    case Axis::Axial:
      if (index >= d.depth) throw Error(ErrorCode::ShapeMismatch, "axial index out of range");
      s.rows = d.height;
      s.cols = d.width;
      for (std::size_t y = 0; y < d.height; ++y)
        for (std::size_t x = 0; x < d.width; ++x) s.values.push_back(field[idx(index, y, x)]);
      break;
    case Axis::Coronal:
      if (index >= d.height) throw Error(ErrorCode::ShapeMismatch, "coronal index out of range");
      s.rows = d.depth;
      s.cols = d.width;
      for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t x = 0; x < d.width; ++x) s.values.push_back(field[idx(z, index, x)]);
      break;
    case Axis::Sagittal:
      if (index >= d.width) throw Error(ErrorCode::ShapeMismatch, "sagittal index out of range");
      s.rows = d.depth;
      s.cols = d.height;
      for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y) s.values.push_back(field[idx(z, y, index)]);
      break;
  }
  return s;
}

Slice2D extract_slice(const Volume& v, Axis axis, std::size_t index) {
  return extract_slice(v.voxels(), v.dims(), axis, index);
}

Slice2D extract_mask_slice(const SaliencyMask& mask, Axis axis, std::size_t index) {
  std::vector<float> field(mask.keep.begin(), mask.keep.end());
  return extract_slice(field, mask.dims, axis, index);
}

std::vector<std::uint8_t> render_overlay(const Slice2D& background, const Slice2D& mask) {
  if (background.rows != mask.rows || background.cols != mask.cols ||
      background.values.size() != background.rows * background.cols) {
    throw Error(ErrorCode::ShapeMismatch, "background and mask slices differ in shape");
  }
  const auto [mn, mx] = std::minmax_element(background.values.begin(), background.values.end());
  const double lo = background.values.empty() ? 0.0 : *mn;
  const double range = background.values.empty() ? 0.0 : static_cast<double>(*mx) - lo;

  const std::string header =
      "P6\n" + std::to_string(background.cols) + " " + std::to_string(background.rows) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * background.values.size());
  for (std::size_t i = 0; i < background.values.size(); ++i) {
    const double g = range > 0.0 ? std::round(255.0 * (background.values[i] - lo) / range) : 0.0;
    if (mask.values[i] != 0.0f) {
      out.push_back(static_cast<std::uint8_t>(std::round(0.4 * g + 0.6 * 255.0)));
      const auto dim = static_cast<std::uint8_t>(std::round(0.4 * g));
      out.push_back(dim);
      out.push_back(dim);
    } else {
      const auto gray = static_cast<std::uint8_t>(g);
      out.insert(out.end(), {gray, gray, gray});
    }
  }
  return out;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace brainage
