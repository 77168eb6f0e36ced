#pragma once

// Attention distillation at desk scale.
//
// The predictor maps an image sequence I_{t-n..t} to an H_a x W_a attention map:
//
//   x_c   = grayscale patches of cell c, stacked over the sequence        (input_dim)
//   z_c   = (W_e + B_e A_e) x_c + b_e                                      (hidden)
//   h_c   = tanh(z_c)
//   s_c   = row_c(W_a + B_a A_a) . h_c + b_ac
//   y_c   = sigmoid(s_c)
//
// W_e, b_e, W_a, b_a are frozen; only the low-rank factors (A down, B up) train.
// The attention head keeps one row per grid cell so adapters can learn spatial layout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vilad/costmap.hpp"
#include "vilad/errors.hpp"
#include "vilad/image.hpp"

namespace vilad::distill {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// out = base + up * down
inline Matrix low_rank_sum(const Matrix& base, const Matrix& up, const Matrix& down) {
  Matrix out = base;
  for (std::size_t i = 0; i < up.rows; ++i)
    for (std::size_t r = 0; r < up.cols; ++r) {
      const double u = up(i, r);
      if (u == 0.0) continue;
      for (std::size_t j = 0; j < down.cols; ++j) out(i, j) += u * down(r, j);
    }
  return out;
}

struct ModelConfig {
  int patch = 4;
  int grid_height = 24;
  int grid_width = 32;
  int history = 2;  // n: number of past frames in addition to the current one
  int hidden = 16;
  int rank = 4;

  [[nodiscard]] std::size_t cells() const { return static_cast<std::size_t>(grid_height) * grid_width; }
  [[nodiscard]] std::size_t input_dim() const {
    return static_cast<std::size_t>(history + 1) * patch * patch;
  }
  [[nodiscard]] int input_width() const { return grid_width * patch; }
  [[nodiscard]] int input_height() const { return grid_height * patch; }

  void validate() const {
    if (patch < 1 || grid_height < 1 || grid_width < 1 || hidden < 1 || rank < 1)
      throw ConfigError("model dimensions must be positive");
    if (history < 0) throw ConfigError("history length must be non-negative");
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Frozen parameters.
struct BaseWeights {
  Matrix embed;                  // hidden x input_dim
  std::vector<double> embed_bias;  // hidden
  Matrix head;                   // cells x hidden
  std::vector<double> head_bias;   // cells
  friend bool operator==(const BaseWeights&, const BaseWeights&) = default;
};

/// Low-rank update up * down added to one frozen matrix.
struct LoraAdapter {
  Matrix down;  // rank x in
  Matrix up;    // out x rank
  friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;
};

struct Adapters {
  LoraAdapter embed;
  LoraAdapter head;
  friend bool operator==(const Adapters&, const Adapters&) = default;
};

/// Gradients for the trainable factors only; base weights have no gradient buffers.
using LoraGradients = Adapters;

inline double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void quantize_all(std::vector<double>& v) {
  for (double& x : v) x = quantize(x);
}

/// Base weights plus adapters. All parameters stay exactly representable as binary32,
/// so the model file round-trips bit-exactly.
struct AttentionModel {
  ModelConfig config;
  BaseWeights base;
  Adapters adapters;

  /// Random frozen base, adapters with down ~ N(0, 0.02) and up = 0.
  static AttentionModel create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    AttentionModel m;
    m.config = cfg;
    const std::size_t in = cfg.input_dim();
    const auto hid = static_cast<std::size_t>(cfg.hidden);
    const auto r = static_cast<std::size_t>(cfg.rank);
    const std::size_t cells = cfg.cells();

    auto fill = [&rng](Matrix& mat, double stddev) {
      std::normal_distribution<double> d(0.0, stddev);
      for (double& x : mat.data) x = quantize(d(rng));
    };
    m.base.embed = Matrix(hid, in);
    fill(m.base.embed, 1.0 / std::sqrt(static_cast<double>(in)));
    m.base.embed_bias.assign(hid, 0.0);
    m.base.head = Matrix(cells, hid);
    fill(m.base.head, 1.0 / std::sqrt(static_cast<double>(hid)));
    m.base.head_bias.assign(cells, 0.0);

    m.adapters.embed.down = Matrix(r, in);
    fill(m.adapters.embed.down, 0.02);
    m.adapters.embed.up = Matrix(hid, r);
    m.adapters.head.down = Matrix(r, hid);
    fill(m.adapters.head.down, 0.02);
    m.adapters.head.up = Matrix(cells, r);
    return m;
  }

  /// Same model with the adapters' contribution removed (up factors zeroed).
  [[nodiscard]] AttentionModel frozen_base() const {
    AttentionModel m = *this;
    std::fill(m.adapters.embed.up.data.begin(), m.adapters.embed.up.data.end(), 0.0);
    std::fill(m.adapters.head.up.data.begin(), m.adapters.head.up.data.end(), 0.0);
    return m;
  }
};

/// Grayscale image with intensities in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Box-filter downsampling of an RGB frame to the model's input resolution.
inline GrayImage to_model_resolution(const RgbImage& src, int width, int height) {
  if (src.width < width || src.height < height) throw DimensionError("frame smaller than model input resolution");
  GrayImage out{width, height, std::vector<double>(static_cast<std::size_t>(width) * height, 0.0)};
  for (int y = 0; y < height; ++y) {
    const int y0 = y * src.height / height;
    const int y1 = std::max(y0 + 1, (y + 1) * src.height / height);
    for (int x = 0; x < width; ++x) {
      const int x0 = x * src.width / width;
      const int x1 = std::max(x0 + 1, (x + 1) * src.width / width);
      double acc = 0.0;
      for (int sy = y0; sy < y1; ++sy)
        for (int sx = x0; sx < x1; ++sx) {
          const auto c = src.get(sx, sy);
          acc += 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        }
      out.pixels[static_cast<std::size_t>(y) * width + x] = acc / (255.0 * (y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

/// Frames I_{t-n} ... I_t, oldest first, at the model's input resolution.
struct ImageSequence {
  std::vector<GrayImage> frames;

  static ImageSequence from_frames(std::span<const ImageFrame> frames, const ModelConfig& cfg) {
    ImageSequence seq;
    for (const auto& f : frames) seq.frames.push_back(to_model_resolution(f.image, cfg.input_width(), cfg.input_height()));
    return seq;
  }
};

/// Per-cell stacked patches, cells x input_dim, the layout consumed by forward().
struct ModelInput {
  std::size_t cells = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  [[nodiscard]] std::span<const double> cell(std::size_t c) const { return {values.data() + c * dim, dim}; }
};

inline ModelInput prepare_input(const ImageSequence& seq, const ModelConfig& cfg) {
  if (seq.frames.size() != static_cast<std::size_t>(cfg.history) + 1)
    throw ConfigError("sequence has " + std::to_string(seq.frames.size()) + " frames, model expects " +
                      std::to_string(cfg.history + 1));
  for (const auto& f : seq.frames)
    if (f.width != cfg.input_width() || f.height != cfg.input_height())
      throw ConfigError("sequence frame resolution does not match the model");
  ModelInput in{cfg.cells(), cfg.input_dim(), std::vector<double>(cfg.cells() * cfg.input_dim())};
  const int p = cfg.patch;
  for (int gi = 0; gi < cfg.grid_height; ++gi)
    for (int gj = 0; gj < cfg.grid_width; ++gj) {
      double* dst = in.values.data() + (static_cast<std::size_t>(gi) * cfg.grid_width + gj) * in.dim;
      for (const auto& f : seq.frames)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            *dst++ = f.pixels[static_cast<std::size_t>(gi * p + py) * f.width + (gj * p + px)];
    }
  return in;
}

/// Intermediate activations kept for the backward pass.
struct ForwardTrace {
  Matrix embed_eff;
  Matrix head_eff;
  std::vector<double> hidden;  // cells x hidden, post-tanh
  std::vector<double> output;  // cells, post-sigmoid
};

inline ForwardTrace forward_trace(const AttentionModel& model, const ModelInput& input) {
  const auto& cfg = model.config;
  if (input.cells != cfg.cells() || input.dim != cfg.input_dim())
    throw ConfigError("model input shape does not match the model configuration");
  ForwardTrace t;
  t.embed_eff = low_rank_sum(model.base.embed, model.adapters.embed.up, model.adapters.embed.down);
  t.head_eff = low_rank_sum(model.base.head, model.adapters.head.up, model.adapters.head.down);
  const auto hid = static_cast<std::size_t>(cfg.hidden);
  t.hidden.assign(input.cells * hid, 0.0);
  t.output.assign(input.cells, 0.0);
  for (std::size_t c = 0; c < input.cells; ++c) {
    const auto x = input.cell(c);
    double s = model.base.head_bias[c];
    for (std::size_t k = 0; k < hid; ++k) {
      double z = model.base.embed_bias[k];
      const double* w = &t.embed_eff.data[k * input.dim];
      for (std::size_t j = 0; j < input.dim; ++j) z += w[j] * x[j];
      const double h = std::tanh(z);
      t.hidden[c * hid + k] = h;
      s += t.head_eff(c, k) * h;
    }
    t.output[c] = 1.0 / (1.0 + std::exp(-s));
  }
  return t;
}

/// Raw double-precision attention values, cells in row-major grid order.
inline std::vector<double> forward_values(const AttentionModel& model, const ModelInput& input) {
  return forward_trace(model, input).output;
}

inline AttentionMap to_attention_map(const ModelConfig& cfg, std::span<const double> values) {
  std::vector<float> v(values.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::clamp(static_cast<float>(values[k]), 0.0f, 1.0f);
  return {static_cast<std::size_t>(cfg.grid_width), static_cast<std::size_t>(cfg.grid_height), std::move(v),
          MapRole::Distilled, MapFrame::Image};
}

inline AttentionMap forward(const AttentionModel& model, const ModelInput& input) {
  return to_attention_map(model.config, forward_values(model, input));
}

inline AttentionMap forward(const AttentionModel& model, const ImageSequence& seq) {
  return forward(model, prepare_input(seq, model.config));
}

// ---------------------------------------------------------------------------
// Attention consistency loss

struct LossDiagnostics {
  bool degenerate = false;  // both norms were (near) zero
};

inline constexpr double kDefaultEpsilon = 1e-8;

/// 1 - <a, b> / max(|a| |b|, eps) over flattened maps.
template <class A, class B>
double loss_cosine(std::span<const A> a, std::span<const B> b, double epsilon = kDefaultEpsilon,
                   LossDiagnostics* diag = nullptr) {
  if (a.size() != b.size()) throw DimensionError("cosine loss needs maps of equal size");
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a[k];
    const double y = b[k];
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  const double n = std::sqrt(aa) * std::sqrt(bb);
  if (diag) diag->degenerate = n <= epsilon;
  return 1.0 - ab / std::max(n, epsilon);
}

inline double loss_cosine(const AttentionMap& a, const AttentionMap& b, double epsilon = kDefaultEpsilon,
                          LossDiagnostics* diag = nullptr) {
  if (a.width() != b.width() || a.height() != b.height()) throw DimensionError("cosine loss needs equal map shapes");
  return loss_cosine(a.values(), b.values(), epsilon, diag);
}

/// Same quantity under the name it often goes by in attention-distillation write-ups
/// ("SSIM" loss), even though it is a cosine distance.
inline double loss_ssim(const AttentionMap& a, const AttentionMap& b, double epsilon = kDefaultEpsilon) {
  return loss_cosine(a, b, epsilon);
}

struct DistillConfig {
  double lambda_vlm = 0.5;
  double learning_rate = 20.0;
  int rank = 4;
  int steps = 200;
  int batch_size = 1;
  double epsilon = kDefaultEpsilon;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda_vlm >= 0.0 && lambda_vlm <= 1.0)) throw ConfigError("lambda_vlm must be in [0,1]");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (rank < 1) throw ConfigError("LoRA rank must be positive");
    if (steps < 1) throw ConfigError("steps must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  }
};

/// (1 - lambda) * L(pred, a_pre) + lambda * L(pred, a_vlm)
template <class P, class Q, class R>
double loss_total(std::span<const P> pred, std::span<const Q> a_pre, std::span<const R> a_vlm,
                  const DistillConfig& cfg) {
  const double l_pre = loss_cosine(pred, a_pre, cfg.epsilon);
  const double l_vlm = loss_cosine(pred, a_vlm, cfg.epsilon);
  return (1.0 - cfg.lambda_vlm) * l_pre + cfg.lambda_vlm * l_vlm;
}

inline double loss_total(const AttentionMap& pred, const AttentionMap& a_pre, const AttentionMap& a_vlm,
                         const DistillConfig& cfg) {
  if (pred.width() != a_pre.width() || pred.height() != a_pre.height() || pred.width() != a_vlm.width() ||
      pred.height() != a_vlm.height())
    throw DimensionError("loss_total needs maps of equal shape");
  return loss_total(pred.values(), a_pre.values(), a_vlm.values(), cfg);
}

namespace detail {

// d/dy of 1 - <y, a> / max(|y||a|, eps), accumulated into grad with a weight.
inline void add_cosine_grad(std::span<const double> y, std::span<const float> a, double epsilon, double weight,
                            std::vector<double>& grad) {
  double ya = 0.0;
  double yy = 0.0;
  double aa = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    ya += y[k] * a[k];
    yy += y[k] * y[k];
    aa += static_cast<double>(a[k]) * a[k];
  }
  const double ny = std::sqrt(yy);
  const double na = std::sqrt(aa);
  const double n = ny * na;
  if (n > epsilon) {
    const double c = ya * na / (n * n * ny);
    for (std::size_t k = 0; k < y.size(); ++k) grad[k] += weight * (-a[k] / n + c * y[k]);
  } else {
    for (std::size_t k = 0; k < y.size(); ++k) grad[k] += weight * (-a[k] / epsilon);
  }
}

}  // namespace detail

struct LossAndGradients {
  double loss = 0.0;
  LoraGradients grads;
};

inline LoraGradients zero_gradients(const Adapters& a) {
  LoraGradients g;
  g.embed.down = Matrix(a.embed.down.rows, a.embed.down.cols);
  g.embed.up = Matrix(a.embed.up.rows, a.embed.up.cols);
  g.head.down = Matrix(a.head.down.rows, a.head.down.cols);
  g.head.up = Matrix(a.head.up.rows, a.head.up.cols);
  return g;
}

/// Analytic gradients of loss_total with respect to every adapter entry.
inline LossAndGradients backward(const AttentionModel& model, const ModelInput& input, const AttentionMap& a_pre,
                                 const AttentionMap& a_vlm, const DistillConfig& cfg) {
  const auto& mc = model.config;
  if (a_pre.size() != mc.cells() || a_vlm.size() != mc.cells())
    throw DimensionError("target maps do not match the model grid");
  const ForwardTrace t = forward_trace(model, input);
  const std::size_t cells = input.cells;
  const auto hid = static_cast<std::size_t>(mc.hidden);
  const auto rank = static_cast<std::size_t>(mc.rank);

  LossAndGradients out;
  out.loss = loss_total(std::span<const double>(t.output), a_pre.values(), a_vlm.values(), cfg);

  std::vector<double> dy(cells, 0.0);
  detail::add_cosine_grad(t.output, a_pre.values(), cfg.epsilon, 1.0 - cfg.lambda_vlm, dy);
  detail::add_cosine_grad(t.output, a_vlm.values(), cfg.epsilon, cfg.lambda_vlm, dy);

  // Through the sigmoid and the attention head.
  Matrix d_head(cells, hid);
  Matrix d_embed(hid, input.dim);
  for (std::size_t c = 0; c < cells; ++c) {
    const double y = t.output[c];
    const double ds = dy[c] * y * (1.0 - y);
    if (ds == 0.0) continue;
    const auto x = input.cell(c);
    for (std::size_t k = 0; k < hid; ++k) {
      const double h = t.hidden[c * hid + k];
      d_head(c, k) = ds * h;
      const double dz = ds * t.head_eff(c, k) * (1.0 - h * h);
      double* row = &d_embed.data[k * input.dim];
      for (std::size_t j = 0; j < input.dim; ++j) row[j] += dz * x[j];
    }
  }

  // dW = dEff; d(up) = dEff * down^T, d(down) = up^T * dEff.
  auto split = [rank](const Matrix& d_eff, const LoraAdapter& ad, LoraAdapter& g) {
    for (std::size_t i = 0; i < d_eff.rows; ++i)
      for (std::size_t r = 0; r < rank; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d_eff.cols; ++j) acc += d_eff(i, j) * ad.down(r, j);
        g.up(i, r) = acc;
      }
    for (std::size_t r = 0; r < rank; ++r)
      for (std::size_t j = 0; j < d_eff.cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d_eff.rows; ++i) acc += ad.up(i, r) * d_eff(i, j);
        g.down(r, j) = acc;
      }
  };
  out.grads = zero_gradients(model.adapters);
  split(d_head, model.adapters.head, out.grads.head);
  split(d_embed, model.adapters.embed, out.grads.embed);
  return out;
}

inline LossAndGradients backward(const AttentionModel& model, const ImageSequence& seq, const AttentionMap& a_pre,
                                 const AttentionMap& a_vlm, const DistillConfig& cfg) {
  return backward(model, prepare_input(seq, model.config), a_pre, a_vlm, cfg);
}

// ---------------------------------------------------------------------------
// Training

struct TrainingSample {
  std::string id;
  ModelInput input;
  AttentionMap a_pre;
  AttentionMap a_vlm;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean batch loss before each update
};

/// Visits every adapter parameter with its gradient.
template <class F>
void for_each_parameter(Adapters& params, const LoraGradients& grads, F&& f) {
  auto each = [&f](Matrix& p, const Matrix& g) {
    for (std::size_t k = 0; k < p.data.size(); ++k) f(p.data[k], g.data[k]);
  };
  each(params.embed.down, grads.embed.down);
  each(params.embed.up, grads.embed.up);
  each(params.head.down, grads.head.down);
  each(params.head.up, grads.head.up);
}

/// Plain SGD over the adapters. Step k uses the batch starting at sample (k * batch) mod N,
/// so a fixed dataset order gives bit-identical runs.
inline TrainResult train(AttentionModel& model, std::span<const TrainingSample> data, const DistillConfig& cfg,
                         const std::function<void(std::size_t step, double loss)>& on_step = {}) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training dataset is empty");
  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t step = 0; step < static_cast<std::size_t>(cfg.steps); ++step) {
    LoraGradients sum = zero_gradients(model.adapters);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const TrainingSample& s = data[(step * batch + b) % data.size()];
      LossAndGradients lg = backward(model, s.input, s.a_pre, s.a_vlm, cfg);
      if (!std::isfinite(lg.loss)) throw TrainingError("non-finite loss", step, s.id);
      loss += lg.loss;
      Adapters& acc = sum;
      for_each_parameter(acc, lg.grads, [](double& a, double g) { a += g; });
    }
    loss /= static_cast<double>(batch);
    const double scale = cfg.learning_rate / static_cast<double>(batch);
    for_each_parameter(model.adapters, sum, [scale](double& p, double g) { p = quantize(p - scale * g); });
    result.loss_history.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return result;
}

}  // namespace vilad::distill
