#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include "brainage/dataset.hpp"
#include "brainage/error.hpp"
#include "brainage/imaging.hpp"
#include "brainage/saliency.hpp"
#include "brainage/splitter.hpp"
#include "brainage/vgg8.hpp"

namespace brainage::pipeline {

struct SplitSection {
  HoldoutOrder order = HoldoutOrder::ValidationFirst;
};

struct TrainSection {
  std::size_t input_edge = 32;
  double lr = 1e-4;
  std::size_t batch_size = 3;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double min_improvement = 1e-4;
};

struct EnsembleSection {
  double age_bin_width = 5.0;
};

struct SaliencySection {
  double fraction = 0.2;
  GradReduction reduction = GradReduction::Magnitude;
};

struct PathsSection {
  std::filesystem::path out = "brainage_run";
};

/// One JSON document drives every stage. Only `seed` carries randomness;
/// each stage derives its own stream from it by a fixed tag.
struct RunConfig {
  std::uint64_t seed = 0;
  PhantomSpec phantom;
  SplitSection split;
  TrainSection train_t1w;
  TrainSection train_aicbv;
  EnsembleSection ensemble;
  SaliencySection saliency;
  PathsSection paths;
};

/// Unknown keys and values of the wrong type raise ConfigInvalid; missing
/// keys keep their defaults.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical form: sorted keys, every field present.
std::string config_to_json(const RunConfig& cfg);
void validate(const RunConfig& cfg);

enum class Stage { Synth, Split, TrainT1w, TrainAicbv, Predict, Ensemble, Report, Gradcam };

std::string_view to_string(Stage s);
Stage train_stage(Modality m);

/// Hash of every config section the stage depends on, upstream included.
std::uint64_t stage_hash(const RunConfig& cfg, Stage s);

/// Derived seeds. Tags: "phantom", "split", "train_<mod>", "init_<mod>".
PhantomSpec phantom_spec(const RunConfig& cfg);
std::uint64_t split_seed(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg, Modality m);
Vgg8Config model_config(const RunConfig& cfg, Modality m);

/// Raised when a stage's prerequisite output is absent or stale.
class StageError : public Error {
 public:
  StageError(ErrorCode code, Stage missing, const std::string& message)
      : Error(code, message), stage_(missing) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

/// {"error": code, "message": ..., "stage"?: ...}.
std::string error_json(const std::exception& e);

struct Layout {
  std::filesystem::path root;

  std::filesystem::path volumes() const { return root / "volumes"; }
  std::filesystem::path splits() const { return root / "splits"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path predictions() const { return root / "predictions"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path saliency() const { return root / "saliency"; }

  std::filesystem::path manifest() const { return volumes() / "manifest.json"; }
  std::filesystem::path split_file() const { return splits() / "split.json"; }
  std::filesystem::path checkpoint(Modality m) const;
  std::filesystem::path history(Modality m) const;
  std::filesystem::path prediction_csv() const { return predictions() / "predictions.csv"; }
  std::filesystem::path metrics_json() const { return reports() / "metrics.json"; }
  std::filesystem::path stamp(Stage s) const;
};

struct Context {
  RunConfig cfg;
  std::function<void(std::string_view)> log;

  Layout layout() const { return {cfg.paths.out}; }
  void info(std::string_view msg) const {
    if (log) log(msg);
  }
};

void cmd_synth(const Context& ctx);
void cmd_split(const Context& ctx);
void cmd_train(const Context& ctx, Modality m);
void cmd_predict(const Context& ctx);
void cmd_ensemble(const Context& ctx);
void cmd_report(const Context& ctx);
void cmd_gradcam(const Context& ctx);
/// synth, split, train x2, predict, ensemble, report, gradcam.
void cmd_all(const Context& ctx);

}  // namespace brainage::pipeline
