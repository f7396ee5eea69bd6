#include "avsa/separator.h"

#include <cmath>

#include <Eigen/Dense>

#include "avsa/error.h"

namespace avsa {

namespace {
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
}  // namespace

SeparatorParams SeparatorParams::zeros(size_t bins, size_t channels, size_t classes) {
  if (bins == 0 || classes == 0) throw ConfigError("separator needs bins > 0 and classes > 0");
  if (channels < 2 || channels % 2 != 0)
    throw ConfigError("separator channel count k_r must be even and >= 2, got " + std::to_string(channels));
  SeparatorParams p;
  p.bins = bins;
  p.channels = channels;
  p.hidden = channels / 2;
  p.classes = classes;
  const size_t h = p.hidden;
  p.lift_w = Tensor({bins, h});
  p.lift_b = Tensor({bins, h});
  p.conv_w = Tensor({3, 3, h, h});
  p.conv_b = Tensor({h});
  p.out_w = Tensor({h, channels});
  p.out_b = Tensor({channels});
  p.align_w = Tensor({channels, classes});
  p.align_b = Tensor({channels});
  p.synth_b = Tensor({1});
  return p;
}

SeparatorParams SeparatorParams::init(size_t bins, size_t channels, size_t classes, uint64_t seed) {
  SeparatorParams p = zeros(bins, channels, classes);
  std::mt19937_64 rng(seed);
  const double h = static_cast<double>(p.hidden);
  // Fan-in uniform bounds for the conv and output layers. A wide label
  // embedding keeps the class codes apart from the first step.
  init_normal(p.lift_w, 1.0, rng);
  init_uniform(p.conv_w, 1.0 / std::sqrt(9.0 * h), rng);
  init_uniform(p.conv_b, 1.0 / std::sqrt(9.0 * h), rng);
  init_uniform(p.out_w, 1.0 / std::sqrt(h), rng);
  init_uniform(p.out_b, 1.0 / std::sqrt(h), rng);
  init_normal(p.align_w, kAlignInitStd, rng);
  return p;
}

SeparatorParams SeparatorParams::from_tensors(const TensorMap& map) {
  auto dims = [&](const std::string& name) -> const std::vector<size_t>& {
    auto it = map.find(name);
    if (it == map.end()) throw DataError("checkpoint lacks entry " + name);
    return it->second.shape;
  };
  const auto& lift = dims("sep.lift_w");
  const auto& align = dims("sep.align_w");
  if (lift.size() != 2 || align.size() != 2) throw DataError("malformed separator checkpoint");
  SeparatorParams p = zeros(lift[0], align[0], align[1]);
  for (auto& [name, t] : p.blocks()) take_tensor(map, name, *t);
  p.validate();
  return p;
}

std::vector<NamedTensor> SeparatorParams::blocks() {
  return {{"sep.lift_w", &lift_w},   {"sep.lift_b", &lift_b},   {"sep.conv_w", &conv_w},
          {"sep.conv_b", &conv_b},   {"sep.out_w", &out_w},     {"sep.out_b", &out_b},
          {"sep.align_w", &align_w}, {"sep.align_b", &align_b}, {"sep.synth_b", &synth_b}};
}

std::vector<ConstNamedTensor> SeparatorParams::blocks() const {
  std::vector<ConstNamedTensor> out;
  for (auto& [name, t] : const_cast<SeparatorParams*>(this)->blocks()) out.push_back({name, t});
  return out;
}

void SeparatorParams::validate() const {
  if (hidden * 2 != channels) throw DataError("separator hidden width must be channels / 2");
  if (align_w.shape != std::vector<size_t>{channels, classes})
    throw DataError("label alignment output must match the analysis channel count");
  for (const auto& [name, t] : blocks())
    if (!t->all_finite()) throw NumericError("non-finite values in " + name);
}

AnalysisCache analysis_forward(const RealGrid& logmag, const SeparatorParams& params) {
  if (logmag.bins != params.bins)
    throw ShapeError("spectrogram has " + std::to_string(logmag.bins) + " bins, separator expects " +
                     std::to_string(params.bins));
  const size_t T = logmag.frames, F = logmag.bins, H = params.hidden;
  AnalysisCache c;
  c.frames = T;
  c.bins = F;
  c.hidden = H;
  c.input.resize(T * F);
  for (size_t i = 0; i < T * F; ++i) {
    if (!std::isfinite(logmag.values[i])) throw DataError("non-finite log magnitude at cell " + std::to_string(i));
    c.input[i] = (logmag.values[i] + kLogMagShift) * kLogMagScale;
  }

  c.lifted.resize(T * F * H);
  for (size_t t = 0; t < T; ++t)
    for (size_t f = 0; f < F; ++f) {
      const double x = c.input[t * F + f];
      const double* w = &params.lift_w[f * H];
      const double* b = &params.lift_b[f * H];
      double* out = &c.lifted[(t * F + f) * H];
      for (size_t h = 0; h < H; ++h) out[h] = w[h] * x + b[h];
    }

  c.pre.resize(T * F * H);
  for (size_t t = 0; t < T; ++t)
    for (size_t f = 0; f < F; ++f)
      for (size_t o = 0; o < H; ++o) c.pre[(t * F + f) * H + o] = params.conv_b[o];
  // One [F' x H] x [H x H] product per frame and kernel tap.
  for (size_t t = 0; t < T; ++t)
    for (int dt = -1; dt <= 1; ++dt) {
      const long tt = static_cast<long>(t) + dt;
      if (tt < 0 || tt >= static_cast<long>(T)) continue;
      for (int df = -1; df <= 1; ++df) {
        const size_t f0 = df < 0 ? 1 : 0;
        const size_t len = F - (df != 0 ? 1 : 0);
        RowMap out(&c.pre[(t * F + f0) * H], static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(H));
        ConstRowMap in(&c.lifted[(static_cast<size_t>(tt) * F + f0 + df) * H], static_cast<Eigen::Index>(len),
                       static_cast<Eigen::Index>(H));
        ConstRowMap w(&params.conv_w[static_cast<size_t>((dt + 1) * 3 + (df + 1)) * H * H],
                      static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(H));
        out.noalias() += in * w;
      }
    }

  c.act.resize(T * F * H);
  for (size_t i = 0; i < c.pre.size(); ++i) c.act[i] = c.pre[i] > 0.0 ? c.pre[i] : 0.0;
  return c;
}

void analysis_backward(const AnalysisCache& c, std::span<const double> grad_act,
                       const SeparatorParams& params, SeparatorParams& grad) {
  const size_t T = c.frames, F = c.bins, H = c.hidden;
  if (grad_act.size() != T * F * H) throw ShapeError("analysis_backward: gradient size mismatch");

  std::vector<double> grad_pre(T * F * H);
  for (size_t i = 0; i < grad_pre.size(); ++i) grad_pre[i] = c.pre[i] > 0.0 ? grad_act[i] : 0.0;

  std::vector<double> grad_lifted(T * F * H, 0.0);
  for (size_t cell = 0; cell < T * F; ++cell)
    for (size_t o = 0; o < H; ++o) grad.conv_b[o] += grad_pre[cell * H + o];
  for (size_t t = 0; t < T; ++t)
    for (int dt = -1; dt <= 1; ++dt) {
      const long tt = static_cast<long>(t) + dt;
      if (tt < 0 || tt >= static_cast<long>(T)) continue;
      for (int df = -1; df <= 1; ++df) {
        const size_t f0 = df < 0 ? 1 : 0;
        const size_t len = F - (df != 0 ? 1 : 0);
        const size_t in_off = (static_cast<size_t>(tt) * F + f0 + df) * H;
        const size_t k = static_cast<size_t>((dt + 1) * 3 + (df + 1)) * H * H;
        ConstRowMap g(&grad_pre[(t * F + f0) * H], static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(H));
        ConstRowMap in(&c.lifted[in_off], static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(H));
        RowMap gin(&grad_lifted[in_off], static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(H));
        ConstRowMap w(&params.conv_w[k], static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(H));
        RowMap gw(&grad.conv_w[k], static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(H));
        gw.noalias() += in.transpose() * g;
        gin.noalias() += g * w.transpose();
      }
    }

  for (size_t t = 0; t < T; ++t)
    for (size_t f = 0; f < F; ++f) {
      const double x = c.input[t * F + f];
      const double* g = &grad_lifted[(t * F + f) * H];
      double* gw = &grad.lift_w[f * H];
      double* gb = &grad.lift_b[f * H];
      for (size_t h = 0; h < H; ++h) {
        gw[h] += g[h] * x;
        gb[h] += g[h];
      }
    }
}

AudioFeatureGrid analyze_audio(const LogMagSpectrogram& logspec, const SeparatorParams& params) {
  const AnalysisCache c = analysis_forward(logspec, params);
  const size_t H = params.hidden, K = params.channels;
  AudioFeatureGrid g;
  g.frames = c.frames;
  g.bins = c.bins;
  g.channels = K;
  g.values.resize(c.frames * c.bins * K);
  for (size_t cell = 0; cell < c.frames * c.bins; ++cell) {
    double* out = &g.values[cell * K];
    for (size_t k = 0; k < K; ++k) out[k] = params.out_b[k];
    const double* a = &c.act[cell * H];
    for (size_t h = 0; h < H; ++h) {
      const double v = a[h];
      if (v == 0.0) continue;
      const double* w = &params.out_w[h * K];
      for (size_t k = 0; k < K; ++k) out[k] += w[k] * v;
    }
  }
  return g;
}

ConditionVector align_label(size_t class_id, const SeparatorParams& params) {
  if (class_id >= params.classes)
    throw DataError("class id " + std::to_string(class_id) + " out of range [0, " +
                    std::to_string(params.classes) + ")");
  ConditionVector c;
  c.kind = ConditionKind::kSemantic;
  c.values.resize(params.channels);
  for (size_t k = 0; k < params.channels; ++k)
    c.values[k] = sigmoid(params.align_w[k * params.classes + class_id] + params.align_b[k]);
  return c;
}

void align_label_backward(size_t class_id, std::span<const double> cond,
                          std::span<const double> grad_cond, SeparatorParams& grad) {
  for (size_t k = 0; k < cond.size(); ++k) {
    const double dz = grad_cond[k] * cond[k] * (1.0 - cond[k]);
    grad.align_w[k * grad.classes + class_id] += dz;
    grad.align_b[k] += dz;
  }
}

ConditionVector visual_condition(std::span<const double> feature, size_t channels) {
  if (feature.size() != channels)
    throw LengthError("visual feature has length " + std::to_string(feature.size()) + ", expected " +
                      std::to_string(channels));
  for (double v : feature)
    if (!std::isfinite(v)) throw DataError("visual feature is not finite");
  return {std::vector<double>(feature.begin(), feature.end()), ConditionKind::kVisual};
}

std::vector<double> pool_frames(const std::vector<std::vector<double>>& frames) {
  if (frames.empty()) throw LengthError("no frame features to pool");
  std::vector<double> out(frames.front().size(), 0.0);
  for (const auto& f : frames) {
    if (f.size() != out.size()) throw LengthError("frame features differ in length");
    for (size_t i = 0; i < out.size(); ++i) out[i] += f[i];
  }
  for (double& v : out) v /= static_cast<double>(frames.size());
  return out;
}

Mask synthesize_mask(const AudioFeatureGrid& features, const ConditionVector& condition,
                     const SeparatorParams& params) {
  const size_t K = features.channels;
  if (condition.values.size() != K || K != params.channels)
    throw ShapeError("condition has " + std::to_string(condition.values.size()) +
                     " channels, features have " + std::to_string(K));
  Mask mask(features.frames, features.bins);
  const double* c = condition.values.data();
  for (size_t cell = 0; cell < features.frames * features.bins; ++cell) {
    const double* fa = &features.values[cell * K];
    double z = params.synth_b[0];
    for (size_t k = 0; k < K; ++k) z += c[k] * fa[k];
    mask.values[cell] = sigmoid(z);
  }
  return mask;
}

RealGrid condition_logits(const AnalysisCache& cache, std::span<const double> cond,
                          const SeparatorParams& params) {
  const size_t H = cache.hidden, K = params.channels;
  if (cond.size() != K) throw ShapeError("condition length does not match separator channels");
  std::vector<double> u(H, 0.0);
  for (size_t h = 0; h < H; ++h)
    for (size_t k = 0; k < K; ++k) u[h] += params.out_w[h * K + k] * cond[k];
  double offset = params.synth_b[0];
  for (size_t k = 0; k < K; ++k) offset += cond[k] * params.out_b[k];

  RealGrid logits(cache.frames, cache.bins);
  for (size_t cell = 0; cell < logits.size(); ++cell) {
    const double* a = &cache.act[cell * H];
    double z = offset;
    for (size_t h = 0; h < H; ++h) z += u[h] * a[h];
    logits.values[cell] = z;
  }
  return logits;
}

void condition_logits_backward(const AnalysisCache& cache, std::span<const double> cond,
                               const RealGrid& grad_logits, const SeparatorParams& params,
                               SeparatorParams& grad, std::span<double> grad_act,
                               std::span<double> grad_cond) {
  const size_t H = cache.hidden, K = params.channels;
  std::vector<double> u(H, 0.0);
  for (size_t h = 0; h < H; ++h)
    for (size_t k = 0; k < K; ++k) u[h] += params.out_w[h * K + k] * cond[k];

  double total = 0.0;
  std::vector<double> du(H, 0.0);
  for (size_t cell = 0; cell < grad_logits.size(); ++cell) {
    const double g = grad_logits.values[cell];
    if (g == 0.0) continue;
    total += g;
    const double* a = &cache.act[cell * H];
    double* ga = &grad_act[cell * H];
    for (size_t h = 0; h < H; ++h) {
      du[h] += g * a[h];
      ga[h] += g * u[h];
    }
  }
  for (size_t h = 0; h < H; ++h)
    for (size_t k = 0; k < K; ++k) grad.out_w[h * K + k] += du[h] * cond[k];
  for (size_t k = 0; k < K; ++k) grad.out_b[k] += total * cond[k];
  grad.synth_b[0] += total;
  if (!grad_cond.empty()) {
    for (size_t k = 0; k < K; ++k) {
      double acc = params.out_b[k] * total;
      for (size_t h = 0; h < H; ++h) acc += params.out_w[h * K + k] * du[h];
      grad_cond[k] += acc;
    }
  }
}

Separation separate_with(const Spectrogram& mixture_spec, const AudioFeatureGrid& features,
                         const ConditionVector& condition, const SeparatorParams& params,
                         std::optional<double> threshold) {
  Separation s;
  s.soft_mask = synthesize_mask(features, condition, params);
  s.applied_mask = s.soft_mask;
  if (threshold) {
    for (double& v : s.applied_mask.values) v = v >= *threshold ? 1.0 : 0.0;
  }
  s.audio = apply_mask(mixture_spec, s.applied_mask);
  return s;
}

Separation separate(const AudioClip& mixture, const ConditionVector& condition,
                    const SeparatorParams& params, const StftConfig& cfg,
                    std::optional<double> threshold) {
  const Spectrogram spec = stft(mixture, cfg);
  const AudioFeatureGrid features = analyze_audio(log_magnitude(spec), params);
  return separate_with(spec, features, condition, params, threshold);
}

}  // namespace avsa
