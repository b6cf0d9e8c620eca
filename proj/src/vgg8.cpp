#include "brainage/vgg8.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "brainage/dataset.hpp"
#include "brainage/error.hpp"
#include "brainage/rng.hpp"

namespace brainage {

using ag::Mode;
using ag::Shape;

void validate(const Vgg8Config& cfg) {
  const std::size_t e = cfg.input_edge;
  if (e < 32 || !std::has_single_bit(e)) {
    throw Error(ErrorCode::BadEdge,
                "input edge " + std::to_string(e) + " must be a power of two >= 32");
  }
}

void validate(const TrainConfig& tc) {
  if (!(tc.lr > 0.0)) throw Error(ErrorCode::ConfigInvalid, "learning rate must be positive");
  if (tc.batch_size == 0) throw Error(ErrorCode::ConfigInvalid, "batch size must be >= 1");
  if (tc.max_epochs == 0) throw Error(ErrorCode::ConfigInvalid, "max_epochs must be >= 1");
  if (tc.patience >= tc.max_epochs) {
    throw Error(ErrorCode::ConfigInvalid, "patience must be smaller than max_epochs");
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::BadCheckpoint, "truncated checkpoint");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out{'B', 'A', 'G', 'E'};
  put_u32(out, kCheckpointVersion);
  for (const auto& t : c.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.values.data());
    out.insert(out.end(), p, p + 4 * t.values.size());
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(4), "BAGE", 4) != 0) {
    throw Error(ErrorCode::BadCheckpoint, "missing BAGE magic");
  }
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::BadCheckpoint, "unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  while (!in.done()) {
    NamedTensor t;
    const auto len = in.u32();
    const auto* name = in.take(len);
    t.name.assign(reinterpret_cast<const char*>(name), len);
    const auto ndim = in.u32();
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      t.dims.push_back(in.u32());
      count *= t.dims.back();
    }
    t.values.resize(count);
    std::memcpy(t.values.data(), in.take(4 * count), 4 * count);
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Model

namespace {

ag::Tensor<float> he_normal(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  const std::size_t n = ag::numel(shape);
  std::vector<float> v(n);
  SplitMix64 rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : v) x = static_cast<float>(rng.gaussian(0.0, stddev));
  return ag::Tensor<float>(std::move(shape), std::move(v), true);
}

ag::Tensor<float> filled(Shape shape, float value) {
  const std::size_t n = ag::numel(shape);
  return ag::Tensor<float>(std::move(shape), std::vector<float>(n, value), true);
}

std::vector<std::uint32_t> to_dims(const Shape& s) {
  return {s.begin(), s.end()};
}

}  // namespace

Vgg8::Vgg8(const Vgg8Config& cfg) : cfg_(cfg) {
  validate(cfg_);
  auto add = [this](std::string name, ag::Tensor<float> t) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(t));
    return params_.size() - 1;
  };
  auto seed_for = [this](const std::string& name) { return derive_seed(cfg_.init_seed, name); };

  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t out_ch = kVggChannels[i];
    const std::string prefix = "block" + std::to_string(i + 1);
    Block& b = blocks_[i];
    b.conv_w = add(prefix + ".conv.weight",
                   he_normal({out_ch, in_ch, 3, 3, 3}, in_ch * 27, seed_for(prefix + ".conv.weight")));
    b.conv_b = add(prefix + ".conv.bias", filled({out_ch}, 0.0f));
    b.bn_gamma = add(prefix + ".bn.weight", filled({out_ch}, 1.0f));
    b.bn_beta = add(prefix + ".bn.bias", filled({out_ch}, 0.0f));
    b.bn = ag::BatchNormState<float>(out_ch);
    in_ch = out_ch;
  }

  std::size_t fan_in = flatten_size();
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string prefix = "fc" + std::to_string(i + 1);
    const std::size_t fan_out = kVggFcDims[i];
    fc_[2 * i] = add(prefix + ".weight",
                     he_normal({fan_out, fan_in}, fan_in, seed_for(prefix + ".weight")));
    fc_[2 * i + 1] = add(prefix + ".bias", filled({fan_out}, 0.0f));
    fan_in = fan_out;
  }

  // Shape chain: edge E -> E / 2^i after block i.
  for (std::size_t i = 1; i <= 5; ++i) {
    if (edge_after_block(i) * (std::size_t{1} << i) != cfg_.input_edge) {
      throw Error(ErrorCode::BadEdge, "edge does not halve cleanly through five blocks");
    }
  }
}

std::size_t Vgg8::flatten_size() const noexcept {
  const std::size_t e = edge_after_block(5);
  return kVggChannels.back() * e * e * e;
}

std::size_t Vgg8::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Vgg8::Trace Vgg8::forward(const Tensor& input, Mode mode, ag::ConvPath path) {
  const std::size_t e = cfg_.input_edge;
  const Shape& s = input.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != e || s[3] != e || s[4] != e) {
    throw Error(ErrorCode::ShapeMismatch, "model expects [N,1," + std::to_string(e) + "," +
                                              std::to_string(e) + "," + std::to_string(e) + "]");
  }
  Trace trace;
  Tensor x = input;
  for (std::size_t i = 0; i < 5; ++i) {
    Block& b = blocks_[i];
    Tensor c = ag::conv3d(x, params_[b.conv_w], params_[b.conv_b], path);
    if (i == 4) trace.last_conv = c;
    x = ag::maxpool3d(ag::relu(ag::batchnorm3d(c, params_[b.bn_gamma], params_[b.bn_beta], b.bn, mode)));
  }
  x = ag::flatten(x);
  x = ag::relu(ag::linear(x, params_[fc_[0]], params_[fc_[1]]));
  x = ag::relu(ag::linear(x, params_[fc_[2]], params_[fc_[3]]));
  trace.output = ag::linear(x, params_[fc_[4]], params_[fc_[5]]);
  return trace;
}

Checkpoint Vgg8::to_checkpoint(std::optional<std::size_t> epoch,
                               std::optional<double> val_mae) const {
  Checkpoint c;
  auto push_param = [&](std::size_t idx) {
    const auto v = params_[idx].values();
    c.tensors.push_back({names_[idx], to_dims(params_[idx].shape()), {v.begin(), v.end()}});
  };
  for (std::size_t i = 0; i < 5; ++i) {
    const Block& b = blocks_[i];
    const std::string prefix = "block" + std::to_string(i + 1);
    for (std::size_t idx : {b.conv_w, b.conv_b, b.bn_gamma, b.bn_beta}) push_param(idx);
    const auto ch = static_cast<std::uint32_t>(b.bn.running_mean.size());
    c.tensors.push_back({prefix + ".bn.running_mean", {ch}, b.bn.running_mean});
    c.tensors.push_back({prefix + ".bn.running_var", {ch}, b.bn.running_var});
  }
  for (std::size_t idx : fc_) push_param(idx);

  c.tensors.push_back({"meta.input_edge", {1}, {static_cast<float>(cfg_.input_edge)}});
  c.tensors.push_back({"meta.channels", {5}, {16, 32, 64, 128, 256}});
  c.tensors.push_back({"meta.fc_dims", {3}, {512, 128, 1}});
  if (epoch) c.tensors.push_back({"meta.epoch", {1}, {static_cast<float>(*epoch)}});
  if (val_mae) c.tensors.push_back({"meta.val_mae", {1}, {static_cast<float>(*val_mae)}});
  return c;
}

void Vgg8::load(const Checkpoint& c) {
  auto fetch = [&](const std::string& name, std::size_t count) -> const NamedTensor& {
    const NamedTensor* t = c.find(name);
    if (!t) throw Error(ErrorCode::BadCheckpoint, "missing tensor '" + name + "'");
    if (t->values.size() != count) {
      throw Error(ErrorCode::BadCheckpoint, "tensor '" + name + "' has the wrong size");
    }
    return *t;
  };
  for (std::size_t idx = 0; idx < params_.size(); ++idx) {
    const auto& t = fetch(names_[idx], params_[idx].size());
    std::copy(t.values.begin(), t.values.end(), params_[idx].mutable_values().begin());
    params_[idx].zero_grad();
  }
  for (std::size_t i = 0; i < 5; ++i) {
    Block& b = blocks_[i];
    const std::string prefix = "block" + std::to_string(i + 1);
    b.bn.running_mean = fetch(prefix + ".bn.running_mean", b.bn.running_mean.size()).values;
    b.bn.running_var = fetch(prefix + ".bn.running_var", b.bn.running_var.size()).values;
  }
}

Vgg8 Vgg8::from_checkpoint(const Checkpoint& c) {
  const NamedTensor* edge = c.find("meta.input_edge");
  const NamedTensor* channels = c.find("meta.channels");
  const NamedTensor* fc = c.find("meta.fc_dims");
  if (!edge || edge->values.size() != 1 || !channels || !fc) {
    throw Error(ErrorCode::BadCheckpoint, "checkpoint lacks the config echo");
  }
  if (channels->values != std::vector<float>{16, 32, 64, 128, 256} ||
      fc->values != std::vector<float>{512, 128, 1}) {
    throw Error(ErrorCode::BadCheckpoint, "checkpoint was not written by a VGG8 model");
  }
  Vgg8 model(Vgg8Config{static_cast<std::size_t>(edge->values[0]), 0});
  model.load(c);
  return model;
}

// ---------------------------------------------------------------------------
// Training

bool EarlyStopping::update(std::size_t epoch, double metric) {
  if (!have_best_ || metric < best_ - min_improvement_) {
    have_best_ = true;
    best_ = metric;
    best_epoch_ = epoch;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

namespace {

ag::Tensor<float> batch_input(std::span<const Sample> all, std::span<const std::size_t> idx,
                              std::size_t edge) {
  const std::size_t vol = edge * edge * edge;
  std::vector<float> data(idx.size() * vol);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& s = all[idx[i]];
    if (s.voxels.size() != vol) {
      throw Error(ErrorCode::ShapeMismatch, "sample does not match the model's input cube");
    }
    std::copy(s.voxels.begin(), s.voxels.end(), data.begin() + static_cast<std::ptrdiff_t>(i * vol));
  }
  return ag::Tensor<float>({idx.size(), 1, edge, edge, edge}, std::move(data));
}

double mean_abs_error(std::span<const double> pred, std::span<const Sample> samples) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - samples[i].age);
  return acc / static_cast<double>(pred.size());
}

}  // namespace

std::vector<double> predict(Vgg8& model, std::span<const Sample> samples, std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(samples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto input = batch_input(samples, idx, model.config().input_edge);
    const auto trace = model.forward(input, Mode::Eval);
    for (float v : trace.output.values()) out.push_back(static_cast<double>(v));
  }
  return out;
}

TrainResult train(Vgg8& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainConfig& tc, const TrainHooks& hooks) {
  validate(tc);
  if (train_set.empty() || val_set.empty()) {
    throw Error(ErrorCode::EmptySplit, "training and validation sets must be nonempty");
  }
  const std::size_t edge = model.config().input_edge;
  auto& params = model.parameters();
  ag::AdamState<float> adam;
  const ag::AdamConfig adam_cfg{tc.lr};
  EarlyStopping stopper(tc.patience, tc.min_improvement);

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> targets;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    SplitMix64 rng(derive_seed(derive_seed(tc.seed, "epoch"), epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      targets.clear();
      for (std::size_t i : idx) targets.push_back(static_cast<float>(train_set[i].age));

      for (auto& p : params) p.zero_grad();
      const auto trace = model.forward(batch_input(train_set, idx, edge), Mode::Train);
      const ag::Tensor<float> target({idx.size(), 1}, targets);
      auto loss = ag::mae_loss(trace.output, target);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw Error(ErrorCode::DomainError, "training loss diverged at epoch " + std::to_string(epoch));
      }
      loss.backward();
      ag::adam_step(std::span<ag::Tensor<float>>(params), adam, adam_cfg);
      loss_sum += value * static_cast<double>(idx.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = loss_sum / static_cast<double>(order.size());
    rec.val_mae = mean_abs_error(predict(model, val_set), val_set);
    if (hooks.validation_override) rec.val_mae = hooks.validation_override(epoch, rec.val_mae);
    result.history.push_back(rec);

    if (stopper.update(epoch, rec.val_mae)) {
      result.best = model.to_checkpoint(epoch, rec.val_mae);
      result.best_epoch = epoch;
      result.best_val_mae = rec.val_mae;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec, model);
    if (stopper.should_stop()) break;
  }

  for (auto& p : params) p.zero_grad();
  model.load(result.best);
  return result;
}

std::string history_to_csv(std::span<const EpochRecord> history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_mae,val_mae\n";
  for (const auto& r : history) out << r.epoch << ',' << r.train_mae << ',' << r.val_mae << '\n';
  return out.str();
}

Sample make_sample(const Volume& v, double age, std::size_t edge) {
  const Volume shaped = crop_or_pad(normalize_top_percent(v).volume, Dims::cube(edge));
  return {{shaped.voxels().begin(), shaped.voxels().end()}, age};
}

}  // namespace brainage
