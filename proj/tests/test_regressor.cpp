#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pagkit/error.hpp"
#include "pagkit/regressor.hpp"
#include "test_util.hpp"

using namespace pagkit;
using namespace pagkit::regressor;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::IoError;
}

SliceSample constant_slice(std::size_t side, double value, const std::string& id = "P", double target = 0.0) {
  return {std::vector<double>(side * side, value), side, id, 0, target};
}

/// Slices whose target is the mean pixel intensity times 100.
std::vector<SliceSample> mean_intensity_slices(std::size_t n, std::size_t side, std::uint64_t seed,
                                               const std::string& prefix) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> level(0.2, 0.8);
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  std::vector<SliceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    SliceSample s;
    s.side = side;
    s.patient_id = prefix + std::to_string(i / 2);
    s.slice_index = static_cast<std::int32_t>(i % 2);
    const double l = level(rng);
    double sum = 0.0;
    for (std::size_t p = 0; p < side * side; ++p) {
      s.pixels.push_back(std::clamp(l + jitter(rng), 0.0, 1.0));
      sum += s.pixels.back();
    }
    s.target_age = 100.0 * sum / static_cast<double>(side * side);
    out.push_back(std::move(s));
  }
  return out;
}

double label_sd(const std::vector<SliceSample>& s) {
  double m = 0.0;
  for (const auto& x : s) m += x.target_age;
  m /= static_cast<double>(s.size());
  double ss = 0.0;
  for (const auto& x : s) ss += (x.target_age - m) * (x.target_age - m);
  return std::sqrt(ss / static_cast<double>(s.size() - 1));
}

ModelConfig small_model(std::size_t side) {
  ModelConfig cfg;
  cfg.input_size = side;
  cfg.layers = {LayerSpec::conv(4, 3, 1), LayerSpec::relu(), LayerSpec::residual(4), LayerSpec::conv(4, 3, 2),
                LayerSpec::relu(), LayerSpec::global_avg_pool(), LayerSpec::dense(1)};
  return cfg;
}

}  // namespace

TEST_CASE("forward: zero weights and zero input give 0") {
  const auto cfg = ModelConfig::desk_default(8);
  const Network net(cfg);
  auto w = net.init_weights(1);
  const auto zero_input = constant_slice(8, 0.0);
  CHECK(forward(cfg, w, zero_input) == 0.0);
  std::fill(w.values.begin(), w.values.end(), 0.0);
  CHECK(forward(cfg, w, constant_slice(8, 0.7)) == 0.0);
}

TEST_CASE("forward: matches a naive nested-loop oracle within 1e-10") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint64_t variant = 0; variant < 10; ++variant) {
    auto cfg = variant == 0 ? ModelConfig::desk_default(8) : gradcheck::random_config(variant, rng);
    const Network net(cfg);
    auto w = net.init_weights(variant + 11);
    for (auto& v : w.values) v += 0.05 * (u(rng) - 0.5);
    std::vector<double> pixels(cfg.input_size * cfg.input_size);
    for (auto& p : pixels) p = u(rng);
    CHECK(std::fabs(net.forward(w, pixels) - oracle::naive_forward(cfg, w.values, pixels)) < 1e-10);
  }
}

TEST_CASE("init: uniform within the Glorot bound with zero biases") {
  const auto cfg = ModelConfig::desk_default(8);
  const Network net(cfg);
  const auto w = net.init_weights(3);
  // first conv: 8 x 1 x 3 x 3 weights, fan_in 9, fan_out 72
  const double bound = std::sqrt(6.0 / (9.0 + 72.0));
  for (std::size_t i = 0; i < 72; ++i) CHECK(std::fabs(w.values[i]) <= bound);
  for (std::size_t i = 72; i < 80; ++i) CHECK(w.values[i] == 0.0);
  CHECK(net.init_weights(3).values == w.values);
  CHECK(net.init_weights(4).values != w.values);
}

TEST_CASE("loss_mae: worked values, oracle sum and empty batch") {
  const std::vector<double> p{70, 60};
  const std::vector<double> t{65, 65};
  CHECK(loss_mae(p, t) == 5.0);
  CHECK(loss_mae(p, p) == 0.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z(65.0, 10.0);
  std::vector<double> a(37);
  std::vector<double> b(37);
  double direct = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = z(rng);
    b[i] = z(rng);
    direct += std::fabs(a[i] - b[i]);
  }
  CHECK(std::fabs(loss_mae(a, b) - direct / 37.0) < 1e-12);
  CHECK(code_of([] { loss_mae(std::vector<double>{}, std::vector<double>{}); }) == ErrorCode::EmptyBatch);
}

TEST_CASE("backward: zero residual gives the zero subgradient") {
  const auto cfg = small_model(6);
  const Network net(cfg);
  const auto w = net.init_weights(2);
  std::mt19937_64 rng(2);
  auto batch = gradcheck::random_batch(6, 4, rng);
  for (auto& s : batch) s.target_age = net.forward(w, s.pixels);
  const auto g = backward(net, w, batch);
  CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("backward: frozen layers are absent from the gradient") {
  auto cfg = small_model(6);
  const std::size_t all = Network(cfg).trainable_count();
  cfg.layers[0].trainable = false;
  const Network net(cfg);
  CHECK(net.trainable_count() == all - (4 * 9 + 4));
  std::mt19937_64 rng(4);
  const auto batch = gradcheck::random_batch(6, 2, rng);
  CHECK(backward(net, net.init_weights(1), batch).size() == net.trainable_count());
}

TEST_CASE("backward: central differences agree on 10 configs covering every layer kind") {
  std::mt19937_64 rng(99);
  bool seen[5] = {};
  bool frozen = false;
  for (std::uint64_t variant = 0; variant < 10; ++variant) {
    const auto cfg = gradcheck::random_config(variant, rng);
    for (const auto& l : cfg.layers) {
      seen[static_cast<int>(l.kind)] = true;
      frozen |= !l.trainable;
    }
    const auto r = gradcheck::check(cfg, 1000 + variant);
    INFO("variant " << variant << " checked " << r.checked << " redrawn " << r.redrawn);
    CHECK(r.checked >= std::min<std::size_t>(50, Network(cfg).trainable_count() / 2));
    CHECK(r.max_rel_error < 1e-4);
  }
  CHECK(std::all_of(std::begin(seen), std::end(seen), [](bool b) { return b; }));
  CHECK(frozen);
}

TEST_CASE("augment: p = 0 is identity; rotations and flips permute pixels") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SliceSample s;
  s.side = 7;
  for (int i = 0; i < 49; ++i) s.pixels.push_back(u(gen));
  Rng rng(1);
  for (int i = 0; i < 20; ++i) CHECK(augment(s, rng, 0.0).pixels == s.pixels);

  CHECK(rotate90(rotate90(s.pixels, 7, 2), 7, 2) == s.pixels);
  CHECK(rotate90(s.pixels, 7, 4) == s.pixels);
  CHECK(rotate90(rotate90(s.pixels, 7, 1), 7, 3) == s.pixels);
  CHECK(flip(flip(s.pixels, 7, true), 7, true) == s.pixels);
  // (x, y) -> rotated position: the corner pixel moves under a quarter turn
  CHECK(rotate90(s.pixels, 7, 1) != s.pixels);

  auto sorted = s.pixels;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 200; ++i) {
    const auto a = augment(s, rng, 1.0);
    CHECK(a.side == s.side);
    CHECK(a.target_age == s.target_age);
    auto m = a.pixels;
    std::sort(m.begin(), m.end());
    CHECK(m == sorted);
  }
}

TEST_CASE("augment: arbitrary rotation keeps shape and range") {
  SliceSample s = constant_slice(9, 0.0);
  for (std::size_t i = 0; i < s.pixels.size(); ++i) s.pixels[i] = static_cast<double>(i % 9) / 8.0;
  TrainConfig tc;
  tc.augment_probability = 1.0;
  tc.arbitrary_rotation = true;
  tc.max_rotation_degrees = 15.0;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto a = augment(s, rng, tc);
    CHECK(a.pixels.size() == s.pixels.size());
    CHECK(*std::min_element(a.pixels.begin(), a.pixels.end()) >= 0.0);
    CHECK(*std::max_element(a.pixels.begin(), a.pixels.end()) <= 1.0);
  }
}

TEST_CASE("train_fold: guards") {
  const auto cfg = small_model(6);
  TrainConfig tc;
  tc.epochs = 1;
  const std::vector<SliceSample> train{constant_slice(6, 0.1, "A", 60), constant_slice(6, 0.2, "B", 70)};
  const std::vector<SliceSample> val{constant_slice(6, 0.3, "B", 65)};
  CHECK(code_of([&] { train_fold(cfg, tc, train, val); }) == ErrorCode::PatientLeakage);
  tc.epochs = 0;
  const std::vector<SliceSample> ok_val{constant_slice(6, 0.3, "C", 65)};
  CHECK_THROWS_AS(train_fold(cfg, tc, train, ok_val), Error);
  tc.epochs = 1;
  const auto fm = train_fold(cfg, tc, train, ok_val);
  CHECK(fm.epoch_of_best == 1);
  CHECK(fm.trace.size() == 1);
}

TEST_CASE("train_fold: learns the mean-intensity task; best checkpoint equals the trace minimum") {
  const std::size_t side = 8;
  const auto train = mean_intensity_slices(160, side, 1, "T");
  const auto val = mean_intensity_slices(60, side, 2, "V");
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 16;
  tc.learning_rate = 0.05;
  tc.seed = 4;
  const auto cfg = small_model(side);
  const auto fm = train_fold(cfg, tc, train, val);
  const double sd = label_sd(val);
  INFO("best val MAE " << fm.best_val_mae << " label SD " << sd);
  CHECK(fm.best_val_mae < 0.2 * sd);
  double lowest = fm.trace.front().val_mae;
  for (const auto& e : fm.trace) lowest = std::min(lowest, e.val_mae);
  CHECK(fm.best_val_mae == lowest);
  CHECK(fm.trace[fm.epoch_of_best - 1].val_mae == lowest);

  const Network net(cfg);
  double mae = 0.0;
  for (const auto& s : val) mae += std::fabs(net.forward(fm.best_weights, s.pixels) - s.target_age);
  CHECK(mae / static_cast<double>(val.size()) == doctest::Approx(fm.best_val_mae).epsilon(1e-12));

  const auto again = train_fold(cfg, tc, train, val);
  CHECK(again.best_weights.values == fm.best_weights.values);
}

TEST_CASE("train_cv: one model per fold, thread count does not matter, beats the constant predictor") {
  const std::size_t side = 8;
  const auto all = mean_intensity_slices(200, side, 9, "P");
  std::map<std::string, std::vector<SliceSample>> by_patient;
  for (const auto& s : all) by_patient[s.patient_id].push_back(s);
  std::vector<std::vector<std::string>> folds(5);
  std::size_t i = 0;
  for (const auto& [id, _] : by_patient) folds[i++ % 5].push_back(id);

  TrainConfig tc;
  tc.epochs = 25;
  tc.batch_size = 16;
  tc.learning_rate = 0.05;
  tc.seed = 1;
  const auto cfg = small_model(side);
  const auto one = train_cv(cfg, tc, folds, by_patient, 1);
  const auto two = train_cv(cfg, tc, folds, by_patient, 2);
  REQUIRE(one.folds.size() == 5);
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(one.folds[f].best_weights.values == two.folds[f].best_weights.values);
    CHECK(one.fold_mae[f] == one.folds[f].best_val_mae);
    // constant predictor: train-fold mean target
    double mean = 0.0;
    std::size_t n = 0;
    std::vector<double> val_targets;
    for (std::size_t g = 0; g < 5; ++g) {
      for (const auto& id : folds[g]) {
        for (const auto& s : by_patient.at(id)) {
          if (g == f) {
            val_targets.push_back(s.target_age);
          } else {
            mean += s.target_age;
            ++n;
          }
        }
      }
    }
    mean /= static_cast<double>(n);
    double constant = 0.0;
    for (double t : val_targets) constant += std::fabs(t - mean);
    constant /= static_cast<double>(val_targets.size());
    CHECK(one.fold_mae[f] < constant);
  }
}

TEST_CASE("predict: slice means, model means, permutation invariance") {
  ModelConfig cfg;
  cfg.input_size = 4;
  cfg.layers = {LayerSpec::global_avg_pool(), LayerSpec::dense(1)};
  const Network net(cfg);
  Weights identity = net.init_weights(0);
  identity.values = {1.0, 0.0};
  const std::vector<Weights> one{identity};
  const std::vector<SliceSample> slices{constant_slice(4, 68), constant_slice(4, 70), constant_slice(4, 72)};
  CHECK(predict_patient_age(net, one, slices) == 70.0);
  const std::vector<Weights> same{identity, identity, identity};
  CHECK(predict_patient_age(net, same, slices) == 70.0);
  CHECK(predict_slices(net, same, slices) == std::vector<double>{68, 70, 72});
  CHECK(code_of([&] { predict_patient_age(net, one, {}); }) == ErrorCode::NoSlices);

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto cfg2 = small_model(6);
  const Network net2(cfg2);
  std::vector<Weights> models;
  for (int m = 0; m < 3; ++m) models.push_back(net2.init_weights(static_cast<std::uint64_t>(m)));
  std::vector<SliceSample> patient;
  for (int s = 0; s < 4; ++s) {
    auto x = constant_slice(6, 0.0);
    for (auto& p : x.pixels) p = u(rng);
    patient.push_back(x);
  }
  double direct = 0.0;
  for (const auto& s : patient) {
    double per = 0.0;
    for (const auto& w : models) per += net2.forward(w, s.pixels);
    direct += per / 3.0;
  }
  direct /= 4.0;
  CHECK(std::fabs(predict_patient_age(net2, models, patient) - direct) < 1e-12);
  auto shuffled = patient;
  std::reverse(shuffled.begin(), shuffled.end());
  auto reordered = models;
  std::rotate(reordered.begin(), reordered.begin() + 1, reordered.end());
  CHECK(std::fabs(predict_patient_age(net2, reordered, shuffled) - direct) < 1e-12);
}

TEST_CASE("weights: binary round trip and header checks") {
  testutil::TempDir dir("weights");
  const auto cfg = small_model(6);
  const Network net(cfg);
  const auto w = net.init_weights(5);
  write_weights(w, cfg.hash(), dir / "sub" / "w.bin");
  CHECK(read_weights(net, dir / "sub" / "w.bin").values == w.values);

  auto bytes = testutil::read_bytes(dir / "sub" / "w.bin");
  auto bad = bytes;
  bad[0] = 'X';
  testutil::write_bytes(dir / "bad.bin", bad);
  CHECK(code_of([&] { read_weights(net, dir / "bad.bin"); }) == ErrorCode::BadMagic);
  bytes.resize(bytes.size() - 8);
  testutil::write_bytes(dir / "short.bin", bytes);
  CHECK(code_of([&] { read_weights(net, dir / "short.bin"); }) == ErrorCode::TruncatedFile);
  const Network other(small_model(8));
  CHECK(code_of([&] { read_weights(other, dir / "sub" / "w.bin"); }) == ErrorCode::ShapeMismatch);
}
