#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pagkit/imaging.hpp"
#include "pagkit/random.hpp"

namespace pagkit::regressor {

using imaging::SliceSample;

struct LayerSpec {
  enum class Kind { Conv, Residual, ReLU, GlobalAvgPool, Dense };
  Kind kind = Kind::ReLU;
  std::size_t channels = 0;  // Conv/Residual output channels, Dense output size
  std::size_t kernel = 3;    // Conv only, odd; "same" padding of kernel / 2
  std::size_t stride = 1;    // Conv only
  bool trainable = true;

  static LayerSpec conv(std::size_t out_channels, std::size_t kernel, std::size_t stride) {
    return {Kind::Conv, out_channels, kernel, stride, true};
  }
  /// relu(x + conv3x3(relu(conv3x3(x)))), channel count preserved.
  static LayerSpec residual(std::size_t channels) { return {Kind::Residual, channels, 3, 1, true}; }
  static LayerSpec relu() { return {Kind::ReLU, 0, 0, 0, true}; }
  static LayerSpec global_avg_pool() { return {Kind::GlobalAvgPool, 0, 0, 0, true}; }
  static LayerSpec dense(std::size_t out_dim) { return {Kind::Dense, out_dim, 0, 0, true}; }
};

struct ModelConfig {
  std::size_t input_size = 128;
  std::vector<LayerSpec> layers;

  /// Conv(8,3,1) ReLU Residual(8) Conv(16,3,2) ReLU GlobalAvgPool Dense(1).
  static ModelConfig desk_default(std::size_t input_size = 128);

  /// Stable textual form, the basis of config_hash.
  std::string canonical() const;
  std::uint64_t hash() const;
};

struct Shape {
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t size() const { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Flat parameter vector. Layer i owns values[offsets[i], offsets[i+1]).
struct Weights {
  std::vector<double> values;
  std::vector<std::size_t> offsets;
};

struct TrainConfig {
  std::size_t epochs = 120;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  double augment_probability = 0.5;
  bool arbitrary_rotation = false;
  double max_rotation_degrees = 15.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct FoldModel {
  std::size_t fold_index = 0;
  Weights best_weights;
  double best_val_mae = 0.0;
  std::size_t epoch_of_best = 0;
  std::vector<EpochStats> trace;
};

/// Per-forward activation cache, reused across calls.
struct Workspace {
  std::vector<std::vector<double>> activations;  // input of layer i, plus final output
  std::vector<std::vector<double>> inner;        // residual intermediates (a1, r1, a2 sum)
};

class Network {
 public:
  explicit Network(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const std::vector<Shape>& shapes() const { return shapes_; }  // input shape of each layer, then output
  std::size_t parameter_count() const { return offsets_.back(); }
  std::size_t trainable_count() const { return trainable_count_; }
  const std::vector<std::size_t>& offsets() const { return offsets_; }

  /// Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); biases zero.
  Weights init_weights(std::uint64_t seed) const;

  double forward(const Weights& w, std::span<const double> pixels, Workspace& ws) const;
  double forward(const Weights& w, std::span<const double> pixels) const;

  /// Adds d_output * d(output)/d(trainable weights) into `grad` for the
  /// sample last passed through forward() with this workspace.
  void backward(const Weights& w, const Workspace& ws, double d_output, std::span<double> grad) const;

  /// Sign pattern of every ReLU input of the last forward pass. Within one
  /// pattern the output is linear along any single weight coordinate.
  std::vector<std::uint8_t> relu_pattern(const Workspace& ws) const;

  /// Copies trainable entries of a full-length vector into gradient layout
  /// and back.
  std::vector<double> to_trainable(std::span<const double> full) const;
  void apply_update(Weights& w, std::span<const double> trainable_step, double scale) const;

  void check_weights(const Weights& w) const;

 private:
  ModelConfig config_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;
  std::size_t trainable_count_ = 0;
};

double forward(const ModelConfig& cfg, const Weights& w, const SliceSample& s);

double loss_mae(std::span<const double> preds, std::span<const double> targets);

/// Exact gradient of batch MAE w.r.t. trainable weights (subgradient 0 at a
/// zero residual).
std::vector<double> backward(const Network& net, const Weights& w, std::span<const SliceSample> batch);
std::vector<double> backward(const ModelConfig& cfg, const Weights& w, std::span<const SliceSample> batch);

/// Online augmentation: with probability p a k*90 degree rotation
/// (k in {1,2,3}, or a bilinear rotation when arbitrary_rotation is set) and,
/// independently with probability p, a horizontal or vertical flip.
SliceSample augment(const SliceSample& s, Rng& rng, const TrainConfig& tc);
SliceSample augment(const SliceSample& s, Rng& rng, double probability = 0.5);

std::vector<double> rotate90(std::span<const double> pixels, std::size_t side, int quarter_turns);
std::vector<double> flip(std::span<const double> pixels, std::size_t side, bool horizontal);

FoldModel train_fold(const ModelConfig& cfg, const TrainConfig& tc, std::span<const SliceSample> train_slices,
                     std::span<const SliceSample> val_slices, std::size_t fold_index = 0);

struct CvResult {
  std::vector<FoldModel> folds;
  std::vector<double> fold_mae;  // best validation MAE per fold
};

/// One model per fold; fold i validates on exactly its own patients.
/// Folds train concurrently on up to `threads` workers with identical results.
CvResult train_cv(const ModelConfig& cfg, const TrainConfig& tc, const std::vector<std::vector<std::string>>& folds,
                  const std::map<std::string, std::vector<SliceSample>>& slices_by_patient, std::size_t threads = 1);

/// Mean over fold models per slice, then mean over slices.
double predict_patient_age(const Network& net, std::span<const Weights> fold_models,
                           std::span<const SliceSample> patient_slices);

/// Ensemble prediction for every slice of a patient.
std::vector<double> predict_slices(const Network& net, std::span<const Weights> fold_models,
                                   std::span<const SliceSample> patient_slices);

// Serialization ---------------------------------------------------------------

inline constexpr std::uint32_t kWeightsVersion = 1;

/// "PAGW", u32 version, u64 config hash, u64 count, count x f64.
void write_weights(const Weights& w, std::uint64_t config_hash, const std::filesystem::path& path);
Weights read_weights(const Network& net, const std::filesystem::path& path);

/// Header `fold,epoch,train_mae,val_mae`.
void write_loss_trace(std::span<const FoldModel> folds, const std::filesystem::path& path);

}  // namespace pagkit::regressor
