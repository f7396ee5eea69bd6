#include "avsa/parser.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avsa/error.h"
#include "avsa/separator.h"

namespace avsa {

namespace {

AudioEncoderParams encoder_zeros(size_t bins, size_t channels) {
  return {Tensor({channels, bins}), Tensor({channels}), Tensor({channels, channels}), Tensor({channels})};
}

void encoder_init(AudioEncoderParams& enc, size_t bins, size_t channels, std::mt19937_64& rng) {
  // frame_w is applied with a 1/sqrt(bins) factor, so unit-scale entries.
  (void)bins;
  init_uniform(enc.frame_w, 1.0, rng);
  init_uniform(enc.frame_b, 0.1, rng);
  init_normal(enc.proj_w, std::sqrt(1.0 / static_cast<double>(channels)), rng);
}

void affine(const Tensor& w, const Tensor& b, std::span<const double> x, std::span<double> y) {
  const size_t in = x.size();
  for (size_t o = 0; o < y.size(); ++o) {
    double acc = b[o];
    for (size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
    y[o] = acc;
  }
}

}  // namespace

ParserParams ParserParams::zeros(size_t bins, size_t channels, size_t classes) {
  if (bins == 0 || channels == 0 || classes == 0)
    throw ConfigError("parser needs bins, channels and classes > 0");
  ParserParams p;
  p.bins = bins;
  p.channels = channels;
  p.classes = classes;
  p.visible_audio = encoder_zeros(bins, channels);
  p.audible_audio = encoder_zeros(bins, channels);
  p.visual_w = Tensor({channels, channels});
  p.visual_b = Tensor({channels});
  p.visible_w = Tensor({classes, channels});
  p.visible_b = Tensor({classes});
  p.audible_w = Tensor({classes, channels});
  p.audible_b = Tensor({classes});
  return p;
}

ParserParams ParserParams::init(size_t bins, size_t channels, size_t classes, uint64_t seed) {
  ParserParams p = zeros(bins, channels, classes);
  std::mt19937_64 rng(seed);
  const double k = static_cast<double>(channels);
  encoder_init(p.visible_audio, bins, channels, rng);
  encoder_init(p.audible_audio, bins, channels, rng);
  init_normal(p.visual_w, std::sqrt(1.0 / k), rng);
  init_normal(p.visible_w, std::sqrt(1.0 / k), rng);
  init_normal(p.audible_w, std::sqrt(1.0 / k), rng);
  return p;
}

ParserParams ParserParams::from_tensors(const TensorMap& map) {
  auto it = map.find("parser.visible_w");
  auto frame = map.find("parser.visible_audio.frame_w");
  if (it == map.end() || frame == map.end() || it->second.shape.size() != 2 ||
      frame->second.shape.size() != 2)
    throw DataError("malformed parser checkpoint");
  ParserParams p = zeros(frame->second.shape[1], it->second.shape[1], it->second.shape[0]);
  for (auto& [name, t] : p.blocks()) take_tensor(map, name, *t);
  return p;
}

std::vector<NamedTensor> ParserParams::blocks() {
  return {{"parser.visible_audio.frame_w", &visible_audio.frame_w},
          {"parser.visible_audio.frame_b", &visible_audio.frame_b},
          {"parser.visible_audio.proj_w", &visible_audio.proj_w},
          {"parser.visible_audio.proj_b", &visible_audio.proj_b},
          {"parser.audible_audio.frame_w", &audible_audio.frame_w},
          {"parser.audible_audio.frame_b", &audible_audio.frame_b},
          {"parser.audible_audio.proj_w", &audible_audio.proj_w},
          {"parser.audible_audio.proj_b", &audible_audio.proj_b},
          {"parser.visual_w", &visual_w},
          {"parser.visual_b", &visual_b},
          {"parser.visible_w", &visible_w},
          {"parser.visible_b", &visible_b},
          {"parser.audible_w", &audible_w},
          {"parser.audible_b", &audible_b}};
}

std::vector<ConstNamedTensor> ParserParams::blocks() const {
  std::vector<ConstNamedTensor> out;
  for (auto& [name, t] : const_cast<ParserParams*>(this)->blocks()) out.push_back({name, t});
  return out;
}

EncoderCache encoder_forward(const RealGrid& logmag, const AudioEncoderParams& enc, size_t channels) {
  const size_t T = logmag.frames, F = logmag.bins, K = channels;
  if (enc.frame_w.shape != std::vector<size_t>{K, F})
    throw ShapeError("encoder expects " + enc.frame_w.shape_string() + " frame weights, input has " +
                     std::to_string(F) + " bins");
  if (T == 0) throw ShapeError("encoder input has no frames");
  EncoderCache c;
  c.frames = T;
  c.bins = F;
  c.input.resize(T * F);
  for (size_t i = 0; i < T * F; ++i) {
    if (!std::isfinite(logmag.values[i])) throw DataError("non-finite log magnitude in encoder input");
    c.input[i] = logmag.values[i];
  }
  // Standardize per clip so overall gain does not shift features.
  const double n = static_cast<double>(T * F);
  const double mean = std::accumulate(c.input.begin(), c.input.end(), 0.0) / n;
  double var = 0.0;
  for (double v : c.input) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double inv_sd = sd > 1e-12 ? 1.0 / sd : 1.0;
  for (double& v : c.input) v = (v - mean) * inv_sd;
  const double fan = 1.0 / std::sqrt(static_cast<double>(F));
  c.pre.resize(T * K);
  c.pooled.assign(K, 0.0);
  for (size_t t = 0; t < T; ++t) {
    const double* x = &c.input[t * F];
    double* pre = &c.pre[t * K];
    for (size_t k = 0; k < K; ++k) {
      const double* w = &enc.frame_w[k * F];
      double acc = enc.frame_b[k];
      double dot = 0.0;
      for (size_t f = 0; f < F; ++f) dot += w[f] * x[f];
      acc += fan * dot;
      pre[k] = acc;
      if (acc > 0.0) c.pooled[k] += acc;
    }
  }
  const double inv = 1.0 / static_cast<double>(T);
  for (double& v : c.pooled) v *= inv;
  c.output.resize(K);
  affine(enc.proj_w, enc.proj_b, c.pooled, c.output);
  return c;
}

void encoder_backward(const EncoderCache& c, std::span<const double> grad_out,
                      const AudioEncoderParams& enc, size_t channels, AudioEncoderParams& grad) {
  const size_t T = c.frames, F = c.bins, K = channels;
  std::vector<double> grad_pooled(K, 0.0);
  for (size_t o = 0; o < K; ++o) {
    grad.proj_b[o] += grad_out[o];
    for (size_t i = 0; i < K; ++i) {
      grad.proj_w[o * K + i] += grad_out[o] * c.pooled[i];
      grad_pooled[i] += grad_out[o] * enc.proj_w[o * K + i];
    }
  }
  const double inv = 1.0 / static_cast<double>(T);
  for (double& g : grad_pooled) g *= inv;
  const double fan = 1.0 / std::sqrt(static_cast<double>(F));
  for (size_t t = 0; t < T; ++t) {
    const double* x = &c.input[t * F];
    const double* pre = &c.pre[t * K];
    for (size_t k = 0; k < K; ++k) {
      if (pre[k] <= 0.0) continue;
      double* gw = &grad.frame_w[k * F];
      for (size_t f = 0; f < F; ++f) gw[f] += fan * grad_pooled[k] * x[f];
      grad.frame_b[k] += grad_pooled[k];
    }
  }
}

std::vector<double> encode_audio(const LogMagSpectrogram& logspec, const AudioEncoderParams& enc,
                                 size_t channels) {
  return encoder_forward(logspec, enc, channels).output;
}

std::vector<double> fuse_visual(const std::vector<std::vector<double>>& visual_feats,
                                const ParserParams& params) {
  const size_t K = params.channels;
  std::vector<double> phi(K, 0.0);
  if (visual_feats.empty()) return phi;
  std::vector<double> proj(K);
  for (const auto& v : visual_feats) {
    if (v.size() != K)
      throw ShapeError("visual feature has length " + std::to_string(v.size()) + ", expected " +
                       std::to_string(K));
    affine(params.visual_w, params.visual_b, v, proj);
    for (size_t k = 0; k < K; ++k) phi[k] += proj[k];
  }
  for (double& x : phi) x /= static_cast<double>(visual_feats.size());
  return phi;
}

std::vector<double> visible_scores(std::span<const double> phi_v, std::span<const double> phi_a,
                                   const ParserParams& params) {
  std::vector<double> fused(params.channels);
  for (size_t k = 0; k < fused.size(); ++k) fused[k] = phi_v[k] + phi_a[k];
  std::vector<double> z(params.classes);
  affine(params.visible_w, params.visible_b, fused, z);
  for (double& v : z) v = sigmoid(v);
  return z;
}

std::vector<double> audible_scores(std::span<const double> phi_a_prime, const ParserParams& params) {
  std::vector<double> z(params.classes);
  affine(params.audible_w, params.audible_b, phi_a_prime, z);
  for (double& v : z) v = sigmoid(v);
  return z;
}

SceneLabels labels_from_scores(std::vector<double> visible, std::vector<double> audible, double tau) {
  SceneLabels s;
  s.threshold = tau;
  for (size_t c = 0; c < visible.size(); ++c)
    if (visible[c] >= tau) s.visible_set.push_back(c);
  for (size_t c = 0; c < audible.size(); ++c)
    if (audible[c] >= tau) s.audible_set.push_back(c);
  std::set_difference(s.audible_set.begin(), s.audible_set.end(), s.visible_set.begin(),
                      s.visible_set.end(), std::back_inserter(s.invisible_set));
  s.visible_scores = std::move(visible);
  s.audible_scores = std::move(audible);
  return s;
}

SceneLabels parse_scene_logmag(const std::vector<std::vector<double>>& visual_feats,
                               const RealGrid& logmag, const ParserParams& params, double tau) {
  const std::vector<double> phi_v = fuse_visual(visual_feats, params);
  const std::vector<double> phi_a = encoder_forward(logmag, params.visible_audio, params.channels).output;
  const std::vector<double> phi_a2 = encoder_forward(logmag, params.audible_audio, params.channels).output;
  return labels_from_scores(visible_scores(phi_v, phi_a, params), audible_scores(phi_a2, params), tau);
}

SceneLabels parse_scene(const std::vector<std::vector<double>>& visual_feats, const AudioClip& mixture,
                        const ParserParams& params, double tau, const StftConfig& cfg) {
  return parse_scene_logmag(visual_feats, log_magnitude(stft(mixture, cfg)), params, tau);
}

}  // namespace avsa
