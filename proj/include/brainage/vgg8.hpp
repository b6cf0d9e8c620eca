#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brainage/autograd.hpp"
#include "brainage/imaging.hpp"

namespace brainage {

inline constexpr std::array<std::size_t, 5> kVggChannels{16, 32, 64, 128, 256};
inline constexpr std::array<std::size_t, 3> kVggFcDims{512, 128, 1};

struct Vgg8Config {
  std::size_t input_edge = 32;
  std::uint64_t init_seed = 0;
};

/// Throws BadEdge unless the edge is a power of two >= 32.
void validate(const Vgg8Config& cfg);

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

/// Parameters, batchnorm running statistics and a config echo. Serialized
/// as "BAGE", u32 version, then {u32 name_len, name, u32 ndim, u32 dims...,
/// f32 payload} records, all little-endian.
struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Five conv3d -> batchnorm3d -> relu -> maxpool3d blocks with channels
/// 16, 32, 64, 128, 256, then flatten -> 512 -> relu -> 128 -> relu -> 1.
class Vgg8 {
 public:
  using Tensor = ag::Tensor<float>;

  explicit Vgg8(const Vgg8Config& cfg);

  /// Rebuilds a model from a checkpoint; predictions match the model the
  /// checkpoint was taken from bit for bit.
  static Vgg8 from_checkpoint(const Checkpoint& c);

  struct Trace {
    Tensor output;     // [N, 1]
    Tensor last_conv;  // block-5 conv output, before batchnorm
  };

  /// input: [N, 1, E, E, E].
  Trace forward(const Tensor& input, ag::Mode mode, ag::ConvPath path = ag::ConvPath::Fast);

  std::vector<Tensor>& parameters() noexcept { return params_; }
  std::size_t parameter_count() const noexcept;
  std::size_t flatten_size() const noexcept;
  const Vgg8Config& config() const noexcept { return cfg_; }

  /// Spatial edge after block i (1-based); edge 0 is the input edge.
  std::size_t edge_after_block(std::size_t block) const noexcept {
    return cfg_.input_edge >> block;
  }

  Checkpoint to_checkpoint(std::optional<std::size_t> epoch = std::nullopt,
                           std::optional<double> val_mae = std::nullopt) const;
  void load(const Checkpoint& c);

 private:
  struct Block {
    std::size_t conv_w, conv_b, bn_gamma, bn_beta;  // indices into params_
    ag::BatchNormState<float> bn;
  };

  Vgg8Config cfg_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::array<Block, 5> blocks_;
  std::array<std::size_t, 6> fc_;  // w, b per layer
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 3;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double min_improvement = 1e-4;  // years
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& tc);

/// "No improvement" means the metric failed to beat the best so far by
/// more than min_improvement.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_improvement)
      : patience_(patience), min_improvement_(min_improvement) {}

  /// Records one epoch's metric; returns true when it is a new best.
  bool update(std::size_t epoch, double metric);
  bool should_stop() const noexcept { return stale_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  double min_improvement_;
  double best_ = 0.0;
  bool have_best_ = false;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

/// One normalized, shaped volume and its label.
struct Sample {
  std::vector<float> voxels;  // E^3, x fastest
  double age = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  /// Replaces the measured validation MAE (used to test the stopping rule).
  std::function<double(std::size_t epoch, double measured)> validation_override;
  std::function<void(const EpochRecord&, const Vgg8&)> on_epoch;
};

/// Adam on the MAE loss with seeded per-epoch shuffling; the last partial
/// batch is kept. Stops after `patience` epochs without improvement and
/// leaves the model holding the best epoch's weights.
TrainResult train(Vgg8& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainConfig& tc, const TrainHooks& hooks = {});

/// Eval-mode predictions, one per sample, in order.
std::vector<double> predict(Vgg8& model, std::span<const Sample> samples,
                            std::size_t batch_size = 4);

std::string history_to_csv(std::span<const EpochRecord> history);

/// Normalizes (top 1%) and crops/pads a volume to the model cube.
Sample make_sample(const Volume& v, double age, std::size_t edge);

}  // namespace brainage
