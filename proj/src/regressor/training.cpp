#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "pagkit/csv.hpp"
#include "pagkit/error.hpp"
#include "pagkit/parallel.hpp"
#include "pagkit/regressor.hpp"

namespace pagkit::regressor {

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::InvalidConfig, "epochs must be at least 1");
  if (batch_size < 1) fail(ErrorCode::InvalidConfig, "batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::InvalidConfig, "learning_rate must be positive");
  }
  if (!(augment_probability >= 0.0 && augment_probability <= 1.0)) {
    fail(ErrorCode::InvalidConfig, "augment_probability must lie in [0, 1]");
  }
}

double loss_mae(std::span<const double> preds, std::span<const double> targets) {
  if (preds.empty()) fail(ErrorCode::EmptyBatch, "MAE of an empty batch");
  if (preds.size() != targets.size()) fail(ErrorCode::ShapeMismatch, "preds and targets differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - targets[i]);
  return acc / static_cast<double>(preds.size());
}

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Accumulates the batch MAE gradient into grad and returns the batch MAE.
double batch_gradient(const Network& net, const Weights& w, std::span<const SliceSample> batch, Workspace& ws,
                      std::vector<double>& grad) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "gradient of an empty batch");
  grad.assign(net.trainable_count(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& s : batch) {
    const double r = net.forward(w, s.pixels, ws) - s.target_age;
    loss += std::abs(r);
    const double d = sign(r) * inv_n;
    if (d != 0.0) net.backward(w, ws, d, grad);
  }
  return loss * inv_n;
}

double mean_abs_error(const Network& net, const Weights& w, std::span<const SliceSample> slices, Workspace& ws) {
  double acc = 0.0;
  for (const auto& s : slices) acc += std::abs(net.forward(w, s.pixels, ws) - s.target_age);
  return acc / static_cast<double>(slices.size());
}

std::vector<double> rotate_bilinear(std::span<const double> px, std::size_t side, double radians) {
  std::vector<double> out(px.size());
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  const double centre = 0.5 * static_cast<double>(side - 1);
  const auto last = static_cast<double>(side - 1);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = static_cast<double>(x) - centre;
      const double dy = static_cast<double>(y) - centre;
      // inverse map, clamped to the edge so the value range is kept
      const double sx = std::clamp(c * dx + s * dy + centre, 0.0, last);
      const double sy = std::clamp(-s * dx + c * dy + centre, 0.0, last);
      const auto x0 = static_cast<std::size_t>(sx);
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, side - 1);
      const std::size_t y1 = std::min(y0 + 1, side - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      const double top = px[y0 * side + x0] * (1 - fx) + px[y0 * side + x1] * fx;
      const double bot = px[y1 * side + x0] * (1 - fx) + px[y1 * side + x1] * fx;
      out[y * side + x] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

void check_slice(const SliceSample& s, std::size_t input_size) {
  if (s.side != input_size || s.pixels.size() != input_size * input_size) {
    fail(ErrorCode::ShapeMismatch, "slice of " + s.patient_id + " has side " + std::to_string(s.side) +
                                       ", model expects " + std::to_string(input_size));
  }
}

}  // namespace

std::vector<double> backward(const Network& net, const Weights& w, std::span<const SliceSample> batch) {
  for (const auto& s : batch) check_slice(s, net.config().input_size);
  Workspace ws;
  std::vector<double> grad;
  batch_gradient(net, w, batch, ws, grad);
  return grad;
}

std::vector<double> backward(const ModelConfig& cfg, const Weights& w, std::span<const SliceSample> batch) {
  return backward(Network(cfg), w, batch);
}

std::vector<double> rotate90(std::span<const double> px, std::size_t side, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  std::vector<double> out(px.begin(), px.end());
  for (int t = 0; t < k; ++t) {
    std::vector<double> next(out.size());
    // counter-clockwise: (x, y) -> (y, side - 1 - x)
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) next[(side - 1 - x) * side + y] = out[y * side + x];
    }
    out.swap(next);
  }
  return out;
}

std::vector<double> flip(std::span<const double> px, std::size_t side, bool horizontal) {
  std::vector<double> out(px.size());
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t sx = horizontal ? side - 1 - x : x;
      const std::size_t sy = horizontal ? y : side - 1 - y;
      out[y * side + x] = px[sy * side + sx];
    }
  }
  return out;
}

SliceSample augment(const SliceSample& s, Rng& rng, const TrainConfig& tc) {
  // four draws per call whatever the outcome, so the stream stays aligned
  const double u_rot = uniform01(rng);
  const double u_rot_param = uniform01(rng);
  const double u_flip = uniform01(rng);
  const double u_flip_dir = uniform01(rng);
  SliceSample out = s;
  if (u_rot < tc.augment_probability) {
    if (tc.arbitrary_rotation) {
      const double deg = (2.0 * u_rot_param - 1.0) * tc.max_rotation_degrees;
      out.pixels = rotate_bilinear(out.pixels, out.side, deg * std::numbers::pi / 180.0);
    } else {
      out.pixels = rotate90(out.pixels, out.side, 1 + static_cast<int>(std::min(2.0, std::floor(u_rot_param * 3.0))));
    }
  }
  if (u_flip < tc.augment_probability) out.pixels = flip(out.pixels, out.side, u_flip_dir < 0.5);
  return out;
}

SliceSample augment(const SliceSample& s, Rng& rng, double probability) {
  TrainConfig tc;
  tc.augment_probability = probability;
  return augment(s, rng, tc);
}

FoldModel train_fold(const ModelConfig& cfg, const TrainConfig& tc, std::span<const SliceSample> train_slices,
                     std::span<const SliceSample> val_slices, std::size_t fold_index) {
  tc.validate();
  if (train_slices.empty() || val_slices.empty()) fail(ErrorCode::NoSlices, "train and validation sets must be nonempty");
  std::set<std::string> train_ids;
  for (const auto& s : train_slices) train_ids.insert(s.patient_id);
  for (const auto& s : val_slices) {
    if (train_ids.contains(s.patient_id)) {
      fail(ErrorCode::PatientLeakage, "patient " + s.patient_id + " is in both train and validation sets");
    }
  }
  const Network net(cfg);
  for (const auto& s : train_slices) check_slice(s, cfg.input_size);
  for (const auto& s : val_slices) check_slice(s, cfg.input_size);

  FoldModel fm;
  fm.fold_index = fold_index;
  Weights w = net.init_weights(derive_seed(tc.seed, 1000 + fold_index));

  // Train against standardized targets; a trainable Dense head absorbs the
  // inverse transform when a checkpoint is taken, so stored weights map
  // straight to years.
  const bool standardize = cfg.layers.back().kind == LayerSpec::Kind::Dense && cfg.layers.back().trainable;
  double t_mean = 0.0;
  double t_scale = 1.0;
  if (standardize) {
    for (const auto& s : train_slices) t_mean += s.target_age;
    t_mean /= static_cast<double>(train_slices.size());
    double ss = 0.0;
    for (const auto& s : train_slices) ss += (s.target_age - t_mean) * (s.target_age - t_mean);
    if (train_slices.size() > 1 && ss > 0.0) t_scale = std::sqrt(ss / static_cast<double>(train_slices.size() - 1));
  }
  const std::size_t head = net.offsets()[cfg.layers.size() - 1];
  auto to_years = [&](const Weights& z) {
    Weights out = z;
    if (!standardize) return out;
    for (std::size_t i = head; i < out.values.size(); ++i) out.values[i] *= t_scale;
    out.values.back() += t_mean;
    return out;
  };
  std::vector<SliceSample> train_std(train_slices.begin(), train_slices.end());
  for (auto& s : train_std) s.target_age = (s.target_age - t_mean) / t_scale;

  Rng rng = make_rng(tc.seed, 2000 + fold_index);
  std::vector<std::size_t> order(train_std.size());
  std::iota(order.begin(), order.end(), 0);
  Workspace ws;
  std::vector<double> grad;
  std::vector<SliceSample> batch;
  fm.best_val_mae = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    fisher_yates(std::span<std::size_t>(order), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(augment(train_std[order[i]], rng, tc));
      const double loss = batch_gradient(net, w, batch, ws, grad);
      if (!std::isfinite(loss)) {
        fail(ErrorCode::DivergedLoss, "non-finite training loss in fold " + std::to_string(fold_index) + ", epoch " +
                                          std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(batch.size());
      net.apply_update(w, grad, -tc.learning_rate);
      if (!std::all_of(w.values.begin(), w.values.end(), [](double v) { return std::isfinite(v); })) {
        fail(ErrorCode::DivergedLoss, "non-finite weights in fold " + std::to_string(fold_index) + ", epoch " +
                                          std::to_string(epoch));
      }
    }
    Weights years = to_years(w);
    const double val = mean_abs_error(net, years, val_slices, ws);
    if (!std::isfinite(val)) fail(ErrorCode::DivergedLoss, "non-finite validation loss in fold " + std::to_string(fold_index));
    fm.trace.push_back({epoch, t_scale * loss_sum / static_cast<double>(order.size()), val});
    if (val < fm.best_val_mae) {
      fm.best_val_mae = val;
      fm.best_weights = std::move(years);
      fm.epoch_of_best = epoch;
    }
  }
  return fm;
}

CvResult train_cv(const ModelConfig& cfg, const TrainConfig& tc, const std::vector<std::vector<std::string>>& folds,
                  const std::map<std::string, std::vector<SliceSample>>& slices_by_patient, std::size_t threads) {
  if (folds.size() < 2) fail(ErrorCode::InvalidArgument, "cross-validation needs at least two folds");
  auto gather = [&](const std::vector<std::string>& ids, std::vector<SliceSample>& out) {
    for (const auto& id : ids) {
      const auto it = slices_by_patient.find(id);
      if (it == slices_by_patient.end()) fail(ErrorCode::NoSlices, "no slices for patient " + id);
      out.insert(out.end(), it->second.begin(), it->second.end());
    }
  };
  CvResult res;
  res.folds.resize(folds.size());
  parallel_for(folds.size(), threads, [&](std::size_t k) {
    std::vector<SliceSample> train;
    std::vector<SliceSample> val;
    for (std::size_t j = 0; j < folds.size(); ++j) gather(folds[j], j == k ? val : train);
    res.folds[k] = train_fold(cfg, tc, train, val, k);
  });
  for (const auto& f : res.folds) res.fold_mae.push_back(f.best_val_mae);
  return res;
}

std::vector<double> predict_slices(const Network& net, std::span<const Weights> fold_models,
                                   std::span<const SliceSample> patient_slices) {
  if (patient_slices.empty()) fail(ErrorCode::NoSlices, "no slices to predict");
  if (fold_models.empty()) fail(ErrorCode::InvalidArgument, "no fold models");
  Workspace ws;
  std::vector<double> out;
  out.reserve(patient_slices.size());
  for (const auto& s : patient_slices) {
    check_slice(s, net.config().input_size);
    double acc = 0.0;
    for (const auto& w : fold_models) acc += net.forward(w, s.pixels, ws);
    out.push_back(acc / static_cast<double>(fold_models.size()));
  }
  return out;
}

double predict_patient_age(const Network& net, std::span<const Weights> fold_models,
                           std::span<const SliceSample> patient_slices) {
  const auto per_slice = predict_slices(net, fold_models, patient_slices);
  return std::accumulate(per_slice.begin(), per_slice.end(), 0.0) / static_cast<double>(per_slice.size());
}

void write_weights(const Weights& w, std::uint64_t config_hash, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  const std::uint64_t count = w.values.size();
  out.write("PAGW", 4);
  out.write(reinterpret_cast<const char*>(&kWeightsVersion), sizeof(kWeightsVersion));
  out.write(reinterpret_cast<const char*>(&config_hash), sizeof(config_hash));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(w.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

Weights read_weights(const Network& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t hash = 0;
  std::uint64_t count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&hash), sizeof(hash));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in) fail(ErrorCode::TruncatedFile, path.string() + ": short weights header");
  if (std::memcmp(magic, "PAGW", 4) != 0) fail(ErrorCode::BadMagic, path.string() + " is not a weights file");
  if (version != kWeightsVersion) fail(ErrorCode::BadHeader, path.string() + ": unsupported weights version");
  if (hash != net.config().hash()) fail(ErrorCode::ShapeMismatch, path.string() + " was written for another model");
  if (count != net.parameter_count()) fail(ErrorCode::ShapeMismatch, path.string() + ": parameter count mismatch");
  Weights w;
  w.offsets = net.offsets();
  w.values.resize(count);
  in.read(reinterpret_cast<char*>(w.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) fail(ErrorCode::TruncatedFile, path.string() + ": short weights payload");
  net.check_weights(w);
  return w;
}

void write_loss_trace(std::span<const FoldModel> folds, const std::filesystem::path& path) {
  std::string text = "fold,epoch,train_mae,val_mae\n";
  for (const auto& f : folds) {
    for (const auto& e : f.trace) {
      text += std::to_string(f.fold_index) + ',' + std::to_string(e.epoch) + ',' + csv::format_number(e.train_mae) +
              ',' + csv::format_number(e.val_mae) + '\n';
    }
  }
  csv::write_text(path, text);
}

}  // namespace pagkit::regressor
