#include "brainage/imaging.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "brainage/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

namespace brainage {

namespace {

constexpr std::string_view kDescripPrefix = "brainage:";

// NIfTI-1 header field offsets.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kDescripLen = 80;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrowX = 280;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T load(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T out;
  std::memcpy(&out, bytes.data() + offset, sizeof(T));
  return out;
}

template <typename T>
void store(std::vector<std::uint8_t>& bytes, std::size_t offset, T value) {
  std::memcpy(bytes.data() + offset, &value, sizeof(T));
}

}  // namespace

std::string_view to_string(Modality m) {
  return m == Modality::T1w ? "T1w" : "AICBV";
}

Modality parse_modality(std::string_view s) {
  if (s == "T1w" || s == "t1w") return Modality::T1w;
  if (s == "AICBV" || s == "aicbv") return Modality::AICBV;
  throw Error(ErrorCode::ConfigInvalid, "unknown modality '" + std::string(s) + "'");
}

Affine identity_affine() noexcept {
  return {1, 0, 0, 0,  //
          0, 1, 0, 0,  //
          0, 0, 1, 0,  //
          0, 0, 0, 1};
}

Volume::Volume(Dims dims, std::vector<float> voxels, Affine affine, Modality modality)
    : dims_(dims), voxels_(std::move(voxels)), affine_(affine), modality_(modality) {
  if (dims_.depth == 0 || dims_.height == 0 || dims_.width == 0) {
    throw Error(ErrorCode::InvalidVolume, "dimensions must be positive");
  }
  if (voxels_.size() != dims_.count()) {
    throw Error(ErrorCode::InvalidVolume, "voxel count " + std::to_string(voxels_.size()) +
                                              " does not match dims " +
                                              std::to_string(dims_.count()));
  }
  for (float v : voxels_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteVoxel, "volume contains NaN or Inf");
  }
  if (affine_[12] != 0.0f || affine_[13] != 0.0f || affine_[14] != 0.0f || affine_[15] != 1.0f) {
    throw Error(ErrorCode::InvalidVolume, "affine last row must be (0,0,0,1)");
  }
}

Volume read_nifti(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < nifti::kVoxOffset) {
    throw Error(ErrorCode::TruncatedPayload,
                "file is " + std::to_string(bytes.size()) + " bytes, header needs 352");
  }
  if (load<std::int32_t>(bytes, 0) != nifti::kHeaderSize) {
    throw Error(ErrorCode::BadHeader, "sizeof_hdr is not 348 (big-endian or not NIfTI-1)");
  }
  if (std::memcmp(bytes.data() + kOffMagic, "n+1\0", 4) != 0) {
    throw Error(ErrorCode::BadMagic, "magic is not \"n+1\\0\"");
  }

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(bytes, kOffDim + 2 * i);
  if (dim[0] != 3) {
    throw Error(ErrorCode::BadHeader, "dim[0] is " + std::to_string(dim[0]) + ", expected 3");
  }
  if (dim[1] <= 0 || dim[2] <= 0 || dim[3] <= 0) {
    throw Error(ErrorCode::BadHeader, "non-positive spatial dimension");
  }
  const Dims dims{static_cast<std::size_t>(dim[3]), static_cast<std::size_t>(dim[2]),
                  static_cast<std::size_t>(dim[1])};

  const auto datatype = load<std::int16_t>(bytes, kOffDatatype);
  std::size_t width = 0;
  switch (datatype) {
    case nifti::kUint8: width = 1; break;
    case nifti::kInt16: width = 2; break;
    case nifti::kFloat32: width = 4; break;
    default:
      throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(datatype));
  }

  const float vox_offset_f = load<float>(bytes, kOffVoxOffset);
  std::size_t offset = nifti::kVoxOffset;
  if (std::isfinite(vox_offset_f) && vox_offset_f > static_cast<float>(nifti::kVoxOffset)) {
    offset = static_cast<std::size_t>(vox_offset_f);
  }
  const std::size_t n = dims.count();
  if (bytes.size() < offset + n * width) {
    throw Error(ErrorCode::TruncatedPayload, "payload needs " + std::to_string(n * width) +
                                                 " bytes after offset " + std::to_string(offset));
  }

  float slope = load<float>(bytes, kOffSclSlope);
  float inter = load<float>(bytes, kOffSclInter);
  if (slope == 0.0f || !std::isfinite(slope)) {
    slope = 1.0f;
    inter = 0.0f;
  }
  if (!std::isfinite(inter)) inter = 0.0f;

  std::vector<float> voxels(n);
  const auto* payload = bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    double raw = 0.0;
    switch (datatype) {
      case nifti::kUint8: raw = payload[i]; break;
      case nifti::kInt16: {
        std::int16_t v;
        std::memcpy(&v, payload + 2 * i, 2);
        raw = v;
        break;
      }
      default: {
        float v;
        std::memcpy(&v, payload + 4 * i, 4);
        raw = v;
        break;
      }
    }
    const double scaled = raw * static_cast<double>(slope) + static_cast<double>(inter);
    const auto value = static_cast<float>(scaled);
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::NonFiniteVoxel, "voxel " + std::to_string(i) + " is not finite");
    }
    voxels[i] = value;
  }

  Affine affine = identity_affine();
  if (load<std::int16_t>(bytes, kOffSformCode) > 0) {
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        affine[r * 4 + c] = load<float>(bytes, kOffSrowX + (r * 4 + c) * 4);
      }
    }
  } else {
    for (std::size_t a = 0; a < 3; ++a) {
      const float p = load<float>(bytes, kOffPixdim + 4 * (a + 1));
      affine[a * 4 + a] = (p > 0.0f && std::isfinite(p)) ? p : 1.0f;
    }
  }

  Modality modality = Modality::T1w;
  const char* descrip = reinterpret_cast<const char*>(bytes.data() + kOffDescrip);
  const std::string_view text(descrip, strnlen(descrip, kDescripLen));
  if (text.starts_with(kDescripPrefix)) {
    const auto tag = text.substr(kDescripPrefix.size());
    if (tag == "AICBV") modality = Modality::AICBV;
  }
  return Volume(dims, std::move(voxels), affine, modality);
}

std::vector<std::uint8_t> write_nifti(const Volume& v) {
  const std::size_t n = v.dims().count();
  std::vector<std::uint8_t> out(nifti::kVoxOffset + 4 * n, 0);

  store<std::int32_t>(out, 0, nifti::kHeaderSize);
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(v.dims().width),
                                        static_cast<std::int16_t>(v.dims().height),
                                        static_cast<std::int16_t>(v.dims().depth),
                                        1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) store<std::int16_t>(out, kOffDim + 2 * i, dim[i]);
  store<std::int16_t>(out, kOffDatatype, nifti::kFloat32);
  store<std::int16_t>(out, kOffBitpix, 32);

  const Affine& a = v.affine();
  store<float>(out, kOffPixdim, 1.0f);  // qfac
  for (std::size_t c = 0; c < 3; ++c) {
    const double norm = std::sqrt(static_cast<double>(a[c]) * a[c] +
                                  static_cast<double>(a[4 + c]) * a[4 + c] +
                                  static_cast<double>(a[8 + c]) * a[8 + c]);
    store<float>(out, kOffPixdim + 4 * (c + 1), static_cast<float>(norm));
  }
  store<float>(out, kOffVoxOffset, static_cast<float>(nifti::kVoxOffset));
  store<float>(out, kOffSclSlope, 1.0f);
  store<float>(out, kOffSclInter, 0.0f);
  out[kOffXyztUnits] = 2;  // mm

  const std::string descrip = std::string(kDescripPrefix) + std::string(to_string(v.modality()));
  std::memcpy(out.data() + kOffDescrip, descrip.data(), descrip.size());

  store<std::int16_t>(out, kOffQformCode, 0);
  store<std::int16_t>(out, kOffSformCode, 1);
  for (std::size_t i = 0; i < 12; ++i) store<float>(out, kOffSrowX + 4 * i, a[i]);
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

  std::memcpy(out.data() + nifti::kVoxOffset, v.voxels().data(), 4 * n);
  return out;
}

Volume load_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return read_nifti(bytes);
}

void save_nifti(const Volume& v, const std::filesystem::path& path) {
  const auto bytes = write_nifti(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

Volume crop_or_pad(const Volume& v, Dims target) {
  if (target.count() == 0) throw Error(ErrorCode::InvalidVolume, "target dims must be positive");
  const Dims& src = v.dims();

  // shift[a]: source index = destination index + shift[a], per (z, y, x).
  auto shift_for = [](std::size_t from, std::size_t to) -> std::ptrdiff_t {
    if (from >= to) return static_cast<std::ptrdiff_t>((from - to) / 2);
    return -static_cast<std::ptrdiff_t>((to - from) / 2);
  };
  const std::ptrdiff_t sz = shift_for(src.depth, target.depth);
  const std::ptrdiff_t sy = shift_for(src.height, target.height);
  const std::ptrdiff_t sx = shift_for(src.width, target.width);

  std::vector<float> out(target.count(), 0.0f);
  for (std::size_t z = 0; z < target.depth; ++z) {
    const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z) + sz;
    if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(src.depth)) continue;
    for (std::size_t y = 0; y < target.height; ++y) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + sy;
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(src.height)) continue;
      for (std::size_t x = 0; x < target.width; ++x) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x) + sx;
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(src.width)) continue;
        out[(z * target.height + y) * target.width + x] =
            v.at(static_cast<std::size_t>(iz), static_cast<std::size_t>(iy),
                 static_cast<std::size_t>(ix));
      }
    }
  }

  Affine a = v.affine();
  const double shift[3] = {static_cast<double>(sx), static_cast<double>(sy),
                           static_cast<double>(sz)};
  for (std::size_t r = 0; r < 3; ++r) {
    double t = a[r * 4 + 3];
    for (std::size_t c = 0; c < 3; ++c) t += static_cast<double>(a[r * 4 + c]) * shift[c];
    a[r * 4 + 3] = static_cast<float>(t);
  }
  return Volume(target, std::move(out), a, v.modality());
}

}  // namespace brainage
