#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pagkit/error.hpp"
#include "pagkit/hash.hpp"
#include "pagkit/regressor.hpp"

namespace pagkit::regressor {

namespace {

constexpr std::size_t kNoGrad = std::numeric_limits<std::size_t>::max();

Shape conv_output(const Shape& in, std::size_t out_c, std::size_t k, std::size_t stride) {
  const std::size_t pad = k / 2;
  return {out_c, (in.h + 2 * pad - k) / stride + 1, (in.w + 2 * pad - k) / stride + 1};
}

std::size_t conv_params(std::size_t in_c, std::size_t out_c, std::size_t k) { return out_c * in_c * k * k + out_c; }

/// [lo, hi) range of output columns whose tap lands inside the input row.
std::pair<std::size_t, std::size_t> valid_range(std::size_t out_len, std::size_t in_len, std::size_t tap,
                                                std::size_t pad, std::size_t stride) {
  std::size_t lo = 0;
  if (pad > tap) lo = (pad - tap + stride - 1) / stride;
  if (in_len + pad <= tap) return {0, 0};
  const std::size_t hi = std::min(out_len, (in_len - 1 + pad - tap) / stride + 1);
  return {lo, std::max(lo, hi)};
}

void conv_forward(const double* in, const Shape& is, const double* w, const Shape& os, std::size_t k,
                  std::size_t stride, double* out) {
  const std::size_t pad = k / 2;
  const double* bias = w + os.c * is.c * k * k;
  for (std::size_t oc = 0; oc < os.c; ++oc) {
    double* oplane = out + oc * os.h * os.w;
    std::fill(oplane, oplane + os.h * os.w, bias[oc]);
    for (std::size_t ic = 0; ic < is.c; ++ic) {
      const double* iplane = in + ic * is.h * is.w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [oy_lo, oy_hi] = valid_range(os.h, is.h, ky, pad, stride);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = w[((oc * is.c + ic) * k + ky) * k + kx];
          const auto [ox_lo, ox_hi] = valid_range(os.w, is.w, kx, pad, stride);
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const double* irow = iplane + (oy * stride + ky - pad) * is.w + kx - pad;
            double* orow = oplane + oy * os.w;
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox * stride];
          }
        }
      }
    }
  }
}

/// dw/db may be null (frozen layer); din may be null (network input).
void conv_backward(const double* in, const Shape& is, const double* w, const Shape& os, std::size_t k,
                   std::size_t stride, const double* dout, double* dw, double* din) {
  const std::size_t pad = k / 2;
  for (std::size_t oc = 0; oc < os.c; ++oc) {
    const double* dplane = dout + oc * os.h * os.w;
    if (dw) {
      double* db = dw + os.c * is.c * k * k;
      double acc = 0.0;
      for (std::size_t i = 0; i < os.h * os.w; ++i) acc += dplane[i];
      db[oc] += acc;
    }
    for (std::size_t ic = 0; ic < is.c; ++ic) {
      const double* iplane = in + ic * is.h * is.w;
      double* diplane = din ? din + ic * is.h * is.w : nullptr;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [oy_lo, oy_hi] = valid_range(os.h, is.h, ky, pad, stride);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((oc * is.c + ic) * k + ky) * k + kx;
          const double wv = w[widx];
          const auto [ox_lo, ox_hi] = valid_range(os.w, is.w, kx, pad, stride);
          double acc = 0.0;
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const std::size_t ioff = (oy * stride + ky - pad) * is.w + kx - pad;
            const double* irow = iplane + ioff;
            const double* drow = dplane + oy * os.w;
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) acc += drow[ox] * irow[ox * stride];
            if (diplane) {
              double* dirow = diplane + ioff;
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) dirow[ox * stride] += wv * drow[ox];
            }
          }
          if (dw) dw[widx] += acc;
        }
      }
    }
  }
}

void relu_inplace(std::vector<double>& v) {
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

}  // namespace

ModelConfig ModelConfig::desk_default(std::size_t input_size) {
  ModelConfig c;
  c.input_size = input_size;
  c.layers = {LayerSpec::conv(8, 3, 1), LayerSpec::relu(),           LayerSpec::residual(8),
              LayerSpec::conv(16, 3, 2), LayerSpec::relu(), LayerSpec::global_avg_pool(), LayerSpec::dense(1)};
  return c;
}

std::string ModelConfig::canonical() const {
  std::ostringstream s;
  s << "in=" << input_size;
  for (const auto& l : layers) {
    s << ';';
    switch (l.kind) {
      case LayerSpec::Kind::Conv: s << "conv:" << l.channels << ',' << l.kernel << ',' << l.stride; break;
      case LayerSpec::Kind::Residual: s << "res:" << l.channels; break;
      case LayerSpec::Kind::ReLU: s << "relu"; break;
      case LayerSpec::Kind::GlobalAvgPool: s << "gap"; break;
      case LayerSpec::Kind::Dense: s << "dense:" << l.channels; break;
    }
    if (!l.trainable) s << ",frozen";
  }
  return s.str();
}

std::uint64_t ModelConfig::hash() const { return fnv1a(canonical()); }

Network::Network(ModelConfig config) : config_(std::move(config)) {
  if (config_.input_size == 0) fail(ErrorCode::ShapeMismatch, "input size must be positive");
  if (config_.layers.empty()) fail(ErrorCode::ShapeMismatch, "model has no layers");
  Shape s{1, config_.input_size, config_.input_size};
  shapes_.push_back(s);
  offsets_.push_back(0);
  for (const auto& l : config_.layers) {
    std::size_t params = 0;
    switch (l.kind) {
      case LayerSpec::Kind::Conv:
        if (l.channels == 0 || l.kernel == 0 || l.kernel % 2 == 0 || l.stride == 0) {
          fail(ErrorCode::ShapeMismatch, "conv needs channels > 0, odd kernel, stride > 0");
        }
        if (s.h < 1 || s.w < 1) fail(ErrorCode::ShapeMismatch, "conv on an empty feature map");
        params = conv_params(s.c, l.channels, l.kernel);
        s = conv_output(s, l.channels, l.kernel, l.stride);
        break;
      case LayerSpec::Kind::Residual:
        if (l.channels != s.c) {
          fail(ErrorCode::ShapeMismatch, "residual block of " + std::to_string(l.channels) + " channels receives " +
                                             std::to_string(s.c));
        }
        params = 2 * conv_params(s.c, s.c, 3);
        break;
      case LayerSpec::Kind::ReLU: break;
      case LayerSpec::Kind::GlobalAvgPool: s = {s.c, 1, 1}; break;
      case LayerSpec::Kind::Dense:
        if (l.channels == 0) fail(ErrorCode::ShapeMismatch, "dense layer needs out_dim > 0");
        params = l.channels * s.size() + l.channels;
        s = {l.channels, 1, 1};
        break;
    }
    shapes_.push_back(s);
    offsets_.push_back(offsets_.back() + params);
    if (l.trainable) trainable_count_ += params;
  }
  if (s.size() != 1) fail(ErrorCode::ShapeMismatch, "network must end in a single scalar output");
}

Weights Network::init_weights(std::uint64_t seed) const {
  Weights w;
  w.offsets = offsets_;
  w.values.assign(parameter_count(), 0.0);
  Rng rng = make_rng(seed, 0);
  auto fill_uniform = [&](std::size_t offset, std::size_t count, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < count; ++i) w.values[offset + i] = dist(rng);
  };
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    const auto& l = config_.layers[i];
    const Shape& in = shapes_[i];
    switch (l.kind) {
      case LayerSpec::Kind::Conv: {
        const double kk = static_cast<double>(l.kernel * l.kernel);
        fill_uniform(offsets_[i], l.channels * in.c * l.kernel * l.kernel, static_cast<double>(in.c) * kk,
                     static_cast<double>(l.channels) * kk);
        break;
      }
      case LayerSpec::Kind::Residual: {
        const std::size_t per = conv_params(in.c, in.c, 3);
        const double fan = static_cast<double>(in.c) * 9.0;
        fill_uniform(offsets_[i], in.c * in.c * 9, fan, fan);
        fill_uniform(offsets_[i] + per, in.c * in.c * 9, fan, fan);
        break;
      }
      case LayerSpec::Kind::Dense:
        fill_uniform(offsets_[i], l.channels * in.size(), static_cast<double>(in.size()),
                     static_cast<double>(l.channels));
        break;
      default: break;
    }
  }
  return w;
}

void Network::check_weights(const Weights& w) const {
  if (w.values.size() != parameter_count()) {
    fail(ErrorCode::ShapeMismatch, "weight vector has " + std::to_string(w.values.size()) + " entries, model needs " +
                                       std::to_string(parameter_count()));
  }
}

double Network::forward(const Weights& w, std::span<const double> pixels, Workspace& ws) const {
  check_weights(w);
  if (pixels.size() != shapes_.front().size()) {
    fail(ErrorCode::ShapeMismatch, "slice has " + std::to_string(pixels.size()) + " pixels, model expects " +
                                       std::to_string(shapes_.front().size()));
  }
  const std::size_t n_layers = config_.layers.size();
  ws.activations.resize(n_layers + 1);
  ws.inner.resize(n_layers);
  ws.activations[0].assign(pixels.begin(), pixels.end());
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& l = config_.layers[i];
    const Shape& is = shapes_[i];
    const Shape& os = shapes_[i + 1];
    const std::vector<double>& in = ws.activations[i];
    std::vector<double>& out = ws.activations[i + 1];
    out.assign(os.size(), 0.0);
    const double* p = w.values.data() + offsets_[i];
    switch (l.kind) {
      case LayerSpec::Kind::Conv:
        conv_forward(in.data(), is, p, os, l.kernel, l.stride, out.data());
        break;
      case LayerSpec::Kind::Residual: {
        // inner = [a1 | r1 | s]
        const std::size_t n = is.size();
        auto& inner = ws.inner[i];
        inner.assign(3 * n, 0.0);
        double* a1 = inner.data();
        double* r1 = a1 + n;
        double* s = r1 + n;
        conv_forward(in.data(), is, p, is, 3, 1, a1);
        for (std::size_t j = 0; j < n; ++j) r1[j] = a1[j] > 0.0 ? a1[j] : 0.0;
        conv_forward(r1, is, p + conv_params(is.c, is.c, 3), is, 3, 1, s);
        for (std::size_t j = 0; j < n; ++j) {
          s[j] += in[j];
          out[j] = s[j] > 0.0 ? s[j] : 0.0;
        }
        break;
      }
      case LayerSpec::Kind::ReLU:
        out = in;
        relu_inplace(out);
        break;
      case LayerSpec::Kind::GlobalAvgPool: {
        const std::size_t plane = is.h * is.w;
        for (std::size_t c = 0; c < is.c; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < plane; ++j) acc += in[c * plane + j];
          out[c] = acc / static_cast<double>(plane);
        }
        break;
      }
      case LayerSpec::Kind::Dense: {
        const std::size_t n_in = is.size();
        const double* bias = p + os.c * n_in;
        for (std::size_t o = 0; o < os.c; ++o) {
          double acc = bias[o];
          const double* row = p + o * n_in;
          for (std::size_t j = 0; j < n_in; ++j) acc += row[j] * in[j];
          out[o] = acc;
        }
        break;
      }
    }
  }
  return ws.activations.back()[0];
}

double Network::forward(const Weights& w, std::span<const double> pixels) const {
  Workspace ws;
  return forward(w, pixels, ws);
}

void Network::backward(const Weights& w, const Workspace& ws, double d_output, std::span<double> grad) const {
  if (grad.size() != trainable_count_) fail(ErrorCode::ShapeMismatch, "gradient buffer has the wrong length");
  const std::size_t n_layers = config_.layers.size();
  if (ws.activations.size() != n_layers + 1) fail(ErrorCode::ShapeMismatch, "backward without a forward pass");

  // gradient offset of each layer inside the trainable-only vector
  std::vector<std::size_t> goff(n_layers, kNoGrad);
  std::size_t acc = 0;
  for (std::size_t i = 0; i < n_layers; ++i) {
    if (config_.layers[i].trainable) {
      goff[i] = acc;
      acc += offsets_[i + 1] - offsets_[i];
    }
  }

  std::vector<double> dout{d_output};
  std::vector<double> din;
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& l = config_.layers[li];
    const Shape& is = shapes_[li];
    const Shape& os = shapes_[li + 1];
    const std::vector<double>& in = ws.activations[li];
    const double* p = w.values.data() + offsets_[li];
    double* g = goff[li] == kNoGrad ? nullptr : grad.data() + goff[li];
    const bool need_din = li > 0;
    din.assign(is.size(), 0.0);
    switch (l.kind) {
      case LayerSpec::Kind::Conv:
        conv_backward(in.data(), is, p, os, l.kernel, l.stride, dout.data(), g, need_din ? din.data() : nullptr);
        break;
      case LayerSpec::Kind::Residual: {
        const std::size_t n = is.size();
        const auto& inner = ws.inner[li];
        const double* a1 = inner.data();
        const double* r1 = a1 + n;
        const double* s = r1 + n;
        const std::size_t per = conv_params(is.c, is.c, 3);
        std::vector<double> ds(n);
        for (std::size_t j = 0; j < n; ++j) ds[j] = s[j] > 0.0 ? dout[j] : 0.0;
        std::vector<double> dr1(n, 0.0);
        conv_backward(r1, is, p + per, is, 3, 1, ds.data(), g ? g + per : nullptr, dr1.data());
        for (std::size_t j = 0; j < n; ++j) dr1[j] = a1[j] > 0.0 ? dr1[j] : 0.0;
        conv_backward(in.data(), is, p, is, 3, 1, dr1.data(), g, need_din ? din.data() : nullptr);
        for (std::size_t j = 0; j < n; ++j) din[j] += ds[j];
        break;
      }
      case LayerSpec::Kind::ReLU:
        for (std::size_t j = 0; j < in.size(); ++j) din[j] = in[j] > 0.0 ? dout[j] : 0.0;
        break;
      case LayerSpec::Kind::GlobalAvgPool: {
        const std::size_t plane = is.h * is.w;
        const double scale = 1.0 / static_cast<double>(plane);
        for (std::size_t c = 0; c < is.c; ++c) {
          std::fill(din.begin() + static_cast<std::ptrdiff_t>(c * plane),
                    din.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane), dout[c] * scale);
        }
        break;
      }
      case LayerSpec::Kind::Dense: {
        const std::size_t n_in = is.size();
        for (std::size_t o = 0; o < os.c; ++o) {
          const double d = dout[o];
          const double* row = p + o * n_in;
          if (g) {
            double* grow = g + o * n_in;
            for (std::size_t j = 0; j < n_in; ++j) grow[j] += d * in[j];
            g[os.c * n_in + o] += d;
          }
          for (std::size_t j = 0; j < n_in; ++j) din[j] += d * row[j];
        }
        break;
      }
    }
    dout.swap(din);
  }
}

std::vector<std::uint8_t> Network::relu_pattern(const Workspace& ws) const {
  std::vector<std::uint8_t> bits;
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    const auto kind = config_.layers[i].kind;
    if (kind == LayerSpec::Kind::ReLU) {
      for (double x : ws.activations[i]) bits.push_back(x > 0.0);
    } else if (kind == LayerSpec::Kind::Residual) {
      const std::size_t n = shapes_[i].size();
      const auto& inner = ws.inner[i];
      for (std::size_t j = 0; j < n; ++j) bits.push_back(inner[j] > 0.0);
      for (std::size_t j = 0; j < n; ++j) bits.push_back(inner[2 * n + j] > 0.0);
    }
  }
  return bits;
}

std::vector<double> Network::to_trainable(std::span<const double> full) const {
  if (full.size() != parameter_count()) fail(ErrorCode::ShapeMismatch, "full-length vector expected");
  std::vector<double> out;
  out.reserve(trainable_count_);
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    if (!config_.layers[i].trainable) continue;
    out.insert(out.end(), full.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
               full.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
  }
  return out;
}

void Network::apply_update(Weights& w, std::span<const double> trainable_step, double scale) const {
  if (trainable_step.size() != trainable_count_) fail(ErrorCode::ShapeMismatch, "update has the wrong length");
  std::size_t k = 0;
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    if (!config_.layers[i].trainable) continue;
    for (std::size_t j = offsets_[i]; j < offsets_[i + 1]; ++j) w.values[j] += scale * trainable_step[k++];
  }
}

double forward(const ModelConfig& cfg, const Weights& w, const SliceSample& s) {
  if (s.side != cfg.input_size) {
    fail(ErrorCode::ShapeMismatch, "slice side " + std::to_string(s.side) + " vs model input " +
                                       std::to_string(cfg.input_size));
  }
  return Network(cfg).forward(w, s.pixels);
}

}  // namespace pagkit::regressor
