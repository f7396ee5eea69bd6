#include "avsa/train.h"

#include <cmath>
#include <random>

#include "avsa/bss_eval.h"
#include "avsa/error.h"

namespace avsa {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kJoint: return "joint";
    case TrainMode::kVisualOnly: return "visual-only";
    case TrainMode::kSemanticOnly: return "semantic-only";
  }
  return "unknown";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "joint") return TrainMode::kJoint;
  if (name == "visual-only") return TrainMode::kVisualOnly;
  if (name == "semantic-only") return TrainMode::kSemanticOnly;
  throw ConfigError("unknown training mode '" + name + "' (joint, visual-only, semantic-only)");
}

LossConfig effective_loss_config(const LossConfig& cfg, TrainMode mode) {
  LossConfig out = cfg;
  if (mode == TrainMode::kVisualOnly) {
    out.lambda = 2.0;
    out.eta = 0.0;
  } else if (mode == TrainMode::kSemanticOnly) {
    out.lambda = 0.0;
    out.eta = 0.0;
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (visible < 1 || visible > sources)
    throw ConfigError("need 1 <= visible <= sources, got visible=" + std::to_string(visible) +
                      " sources=" + std::to_string(sources));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (optimizer != "sgd-momentum") throw ConfigError("unsupported optimizer '" + optimizer + "'");
}

std::pair<std::vector<double>, std::vector<double>> parser_targets(const std::vector<size_t>& classes,
                                                                   const std::vector<bool>& visible,
                                                                   size_t num_classes) {
  if (classes.size() != visible.size()) throw LengthError("parser_targets: classes and flags differ in length");
  std::vector<double> vis(num_classes, 0.0), aud(num_classes, 0.0);
  for (size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= num_classes) throw DataError("class id " + std::to_string(classes[i]) + " out of range");
    aud[classes[i]] = 1.0;
    if (visible[i]) vis[classes[i]] = 1.0;
  }
  return {vis, aud};
}

namespace {

std::pair<size_t, size_t> crop_window(size_t num_samples, const StftConfig& cfg, size_t crop_frames,
                                      uint64_t seed) {
  const size_t frames = frame_count(num_samples, cfg);
  if (crop_frames == 0 || frames <= crop_frames) return {0, frames};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, frames - crop_frames);
  return {pick(rng), crop_frames};
}

}  // namespace

SeparatorSample make_separator_sample(const MixtureDraw& draw, const Corpus& corpus,
                                      const StftConfig& cfg, size_t crop_frames, uint64_t crop_seed) {
  const auto [first, count] = crop_window(draw.mixture.size(), cfg, crop_frames, crop_seed);
  SeparatorSample s;
  s.logmag = log_magnitude(stft_frames(draw.mixture, cfg, first, count));
  std::vector<Spectrogram> stems;
  for (const auto& stem : draw.stems) stems.push_back(stft_frames(stem, cfg, first, count));
  s.gt = ideal_binary_masks(stems);
  for (size_t idx : draw.manifest.clip_indices)
    s.visual.push_back(pool_frames(corpus.manifest.clips[idx].frames));
  s.classes = draw.manifest.class_ids;
  return s;
}

ParserSample make_parser_sample(const MixtureDraw& draw, const Corpus& corpus, const StftConfig& cfg,
                                size_t crop_frames, uint64_t crop_seed) {
  const auto [first, count] = crop_window(draw.mixture.size(), cfg, crop_frames, crop_seed);
  ParserSample s;
  s.logmag = log_magnitude(stft_frames(draw.mixture, cfg, first, count));
  for (size_t i = 0; i < draw.manifest.clip_indices.size(); ++i)
    if (draw.manifest.visible[i])
      s.visual.push_back(pool_frames(corpus.manifest.clips[draw.manifest.clip_indices[i]].frames));
  std::tie(s.visible_target, s.audible_target) =
      parser_targets(draw.manifest.class_ids, draw.manifest.visible, corpus.classes());
  return s;
}

LossBreakdown separator_batch_loss(const SeparatorParams& params,
                                   const std::vector<SeparatorSample>& samples,
                                   const LossConfig& cfg, SeparatorParams* grad) {
  cfg.validate();
  const double w_vis = cfg.lambda, w_scn = 2.0 - cfg.lambda;
  LossBreakdown out;
  size_t count = 0;
  std::vector<double> vis_terms, scn_terms;

  for (const SeparatorSample& s : samples) {
    const size_t m = s.gt.size();
    if (s.visual.size() != m || s.classes.size() != m) throw LengthError("separator sample is inconsistent");
    const AnalysisCache cache = analysis_forward(s.logmag, params);

    std::vector<std::vector<double>> conds_s(m);
    std::vector<RealGrid> logits_v(m), logits_s(m), prob_v(m), prob_s(m);
    for (size_t i = 0; i < m; ++i) {
      if (!s.gt[i].same_shape(s.logmag)) throw ShapeError("ground-truth mask does not match the mixture");
      const ConditionVector cv = visual_condition(s.visual[i], params.channels);
      conds_s[i] = align_label(s.classes[i], params).values;
      logits_v[i] = condition_logits(cache, cv.values, params);
      logits_s[i] = condition_logits(cache, conds_s[i], params);
      prob_v[i] = logits_v[i];
      prob_s[i] = logits_s[i];
      for (double& v : prob_v[i].values) v = sigmoid(v);
      for (double& v : prob_s[i].values) v = sigmoid(v);
    }

    std::vector<RealGrid> gl_v(m), gl_s(m);
    std::vector<double> sv(m), ss(m);
    for (size_t i = 0; i < m; ++i) {
      sv[i] = mask_loss_logits(s.gt[i], logits_v[i], grad ? &gl_v[i] : nullptr);
      ss[i] = mask_loss_logits(s.gt[i], logits_s[i], grad ? &gl_s[i] : nullptr);
      if (!std::isfinite(sv[i]) || !std::isfinite(ss[i]))
        throw NumericError("non-finite mask loss in forward pass (source " + std::to_string(i) + ")");
      out.vis_loss += sv[i];
      out.scn_loss += ss[i];
      ++count;
    }
    out.l_ss += separation_loss_from_terms(sv, ss, cfg.lambda);

    std::vector<RealGrid> gt_v, gt_s;
    if (m >= 2 && cfg.eta > 0.0) {
      out.l_triplet += triplet_loss(s.gt, prob_v, prob_s, cfg, grad ? &gt_v : nullptr, grad ? &gt_s : nullptr);
    }
    if (!grad) continue;

    std::vector<double> grad_act(cache.act.size(), 0.0);
    for (size_t i = 0; i < m; ++i) {
      for (int branch = 0; branch < 2; ++branch) {
        const bool vis = branch == 0;
        const double w = vis ? w_vis : w_scn;
        RealGrid& g = vis ? gl_v[i] : gl_s[i];
        for (double& v : g.values) v *= w;
        const std::vector<RealGrid>& tg = vis ? gt_v : gt_s;
        bool any = w != 0.0;
        if (!tg.empty()) {
          const RealGrid& p = vis ? prob_v[i] : prob_s[i];
          for (size_t c = 0; c < g.size(); ++c) {
            const double d = tg[i].values[c];
            if (d != 0.0) {
              g.values[c] += d * p.values[c] * (1.0 - p.values[c]);
              any = true;
            }
          }
        }
        if (!any) continue;
        if (vis) {
          condition_logits_backward(cache, s.visual[i], g, params, *grad, grad_act, {});
        } else {
          std::vector<double> grad_cond(params.channels, 0.0);
          condition_logits_backward(cache, conds_s[i], g, params, *grad, grad_act, grad_cond);
          align_label_backward(s.classes[i], conds_s[i], grad_cond, *grad);
        }
      }
    }
    analysis_backward(cache, grad_act, params, *grad);
  }
  out.l_total = out.l_ss + out.l_triplet;
  if (count) {
    out.vis_loss /= static_cast<double>(count);
    out.scn_loss /= static_cast<double>(count);
  }
  return out;
}

namespace {

// Mean BCE over classes from logits; writes dL/dz.
double bce_head(std::span<const double> z, std::span<const double> target, std::span<double> dz) {
  const double n = static_cast<double>(z.size());
  double acc = 0.0;
  for (size_t c = 0; c < z.size(); ++c) {
    acc += softplus(z[c]) - target[c] * z[c];
    dz[c] = (sigmoid(z[c]) - target[c]) / n;
  }
  return acc / n;
}

void head_logits(const Tensor& w, const Tensor& b, std::span<const double> x, std::span<double> z) {
  const size_t k = x.size();
  for (size_t c = 0; c < z.size(); ++c) {
    double acc = b[c];
    for (size_t i = 0; i < k; ++i) acc += w[c * k + i] * x[i];
    z[c] = acc;
  }
}

// Accumulates head weight gradients and returns dL/dx.
std::vector<double> head_backward(const Tensor& w, std::span<const double> x, std::span<const double> dz,
                                  Tensor& gw, Tensor& gb) {
  const size_t k = x.size();
  std::vector<double> dx(k, 0.0);
  for (size_t c = 0; c < dz.size(); ++c) {
    gb[c] += dz[c];
    for (size_t i = 0; i < k; ++i) {
      gw[c * k + i] += dz[c] * x[i];
      dx[i] += dz[c] * w[c * k + i];
    }
  }
  return dx;
}

}  // namespace

ParserLoss parser_batch_loss(const ParserParams& params, const std::vector<ParserSample>& samples,
                             ParserParams* grad) {
  const size_t K = params.channels, C = params.classes;
  ParserLoss out;
  for (const ParserSample& s : samples) {
    if (s.visible_target.size() != C || s.audible_target.size() != C)
      throw LengthError("parser targets must have one entry per class");
    const EncoderCache ev = encoder_forward(s.logmag, params.visible_audio, K);
    const EncoderCache ea = encoder_forward(s.logmag, params.audible_audio, K);
    const std::vector<double> phi_v = fuse_visual(s.visual, params);
    std::vector<double> fused(K);
    for (size_t k = 0; k < K; ++k) fused[k] = phi_v[k] + ev.output[k];

    std::vector<double> zv(C), za(C), dzv(C), dza(C);
    head_logits(params.visible_w, params.visible_b, fused, zv);
    head_logits(params.audible_w, params.audible_b, ea.output, za);
    const double lv = bce_head(zv, s.visible_target, dzv);
    const double la = bce_head(za, s.audible_target, dza);
    if (!std::isfinite(lv) || !std::isfinite(la)) throw NumericError("non-finite parser loss in forward pass");
    out.visible += lv;
    out.audible += la;
    if (!grad) continue;

    const std::vector<double> dfused = head_backward(params.visible_w, fused, dzv, grad->visible_w, grad->visible_b);
    const std::vector<double> dphi_a2 = head_backward(params.audible_w, ea.output, dza, grad->audible_w, grad->audible_b);
    encoder_backward(ev, dfused, params.visible_audio, K, grad->visible_audio);
    encoder_backward(ea, dphi_a2, params.audible_audio, K, grad->audible_audio);
    if (!s.visual.empty()) {
      const double inv = 1.0 / static_cast<double>(s.visual.size());
      for (const auto& v : s.visual)
        for (size_t o = 0; o < K; ++o)
          for (size_t i = 0; i < K; ++i) grad->visual_w[o * K + i] += dfused[o] * v[i] * inv;
      for (size_t o = 0; o < K; ++o) grad->visual_b[o] += dfused[o];
    }
  }
  out.total = out.visible + out.audible;
  return out;
}

void SgdMomentum::step(std::vector<NamedTensor> params, const std::vector<ConstNamedTensor>& grads,
                       const std::vector<double>& scales) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter and gradient lists differ");
  if (!scales.empty() && scales.size() != params.size()) throw ShapeError("optimizer: one scale per block expected");
  if (velocity_.empty())
    for (const auto& p : params) velocity_.emplace_back(p.tensor->size(), 0.0);
  for (size_t b = 0; b < params.size(); ++b) {
    Tensor& p = *params[b].tensor;
    const Tensor& g = *grads[b].tensor;
    std::vector<double>& v = velocity_[b];
    const double lr = lr_ * (scales.empty() ? 1.0 : scales[b]);
    if (g.size() != p.size() || v.size() != p.size()) throw ShapeError("optimizer: size mismatch in " + params[b].name);
    for (size_t i = 0; i < p.size(); ++i) {
      v[i] = mu_ * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

std::vector<double> per_bin_lr_scales(const std::vector<ConstNamedTensor>& blocks, size_t bins) {
  std::vector<double> out;
  for (const auto& [name, t] : blocks) {
    const bool per_bin = name.find("lift_") != std::string::npos && !t->shape.empty() && t->shape[0] == bins;
    out.push_back(per_bin ? static_cast<double>(bins) : 1.0);
  }
  return out;
}

void check_finite(const std::vector<ConstNamedTensor>& blocks, const std::string& what) {
  for (const auto& [name, t] : blocks) {
    for (size_t i = 0; i < t->size(); ++i)
      if (!std::isfinite((*t)[i]))
        throw NumericError(what + ": non-finite value in " + name + " at index " + std::to_string(i));
  }
}

BranchView visual_branch(const SeparatorParams& params) { return {&params, ConditionKind::kVisual}; }
BranchView semantic_branch(const SeparatorParams& params) { return {&params, ConditionKind::kSemantic}; }

namespace {

void require_classes(const Corpus& corpus, size_t m) {
  if (corpus.classes_in(Split::kTrain).size() < m)
    throw DataError("insufficient dataset: training split has fewer than " + std::to_string(m) + " classes");
}

uint64_t draw_seed(uint64_t seed, size_t iter, size_t b) { return mix_seed(mix_seed(seed, iter + 1), b); }

}  // namespace

SeparatorTrainResult train_separator(const Corpus& corpus, const TrainConfig& cfg, const LossConfig& loss,
                                     TrainMode mode, const StftConfig& stft_cfg) {
  cfg.validate();
  stft_cfg.validate();
  const LossConfig eff = effective_loss_config(loss, mode);
  eff.validate();
  require_classes(corpus, cfg.sources);

  SeparatorTrainResult r;
  r.params = SeparatorParams::init(stft_cfg.bins(), corpus.channels(), corpus.classes(), mix_seed(cfg.seed, 0x5E9));
  SgdMomentum opt(cfg.learning_rate, cfg.momentum);
  std::vector<double> scales;
  if (cfg.scale_per_bin_lr) scales = per_bin_lr_scales(std::as_const(r.params).blocks(), r.params.bins);
  for (size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<SeparatorSample> batch;
    for (size_t b = 0; b < cfg.batch; ++b) {
      const uint64_t s = draw_seed(cfg.seed, it, b);
      const MixtureDraw d = draw_mixture(corpus, Split::kTrain, cfg.sources, cfg.visible, s);
      batch.push_back(make_separator_sample(d, corpus, stft_cfg, cfg.crop_frames, mix_seed(s, 7)));
    }
    SeparatorParams grad = SeparatorParams::zeros(r.params.bins, r.params.channels, r.params.classes);
    const LossBreakdown lb = separator_batch_loss(r.params, batch, eff, &grad);
    if (!std::isfinite(lb.l_total)) throw NumericError("separator loss is not finite at iteration " + std::to_string(it));
    check_finite(std::as_const(grad).blocks(), "separator gradient at iteration " + std::to_string(it));
    opt.step(r.params.blocks(), std::as_const(grad).blocks(), scales);
    r.history.push_back({it, lb});
  }
  check_finite(std::as_const(r.params).blocks(), "separator parameters");
  return r;
}

ParserTrainResult train_parser(const Corpus& corpus, const TrainConfig& cfg, const StftConfig& stft_cfg) {
  cfg.validate();
  stft_cfg.validate();
  require_classes(corpus, cfg.sources);

  ParserTrainResult r;
  r.params = ParserParams::init(stft_cfg.bins(), corpus.channels(), corpus.classes(), mix_seed(cfg.seed, 0xA25E));
  SgdMomentum opt(cfg.learning_rate, cfg.momentum);
  std::vector<double> scales;
  if (cfg.scale_per_bin_lr) scales = per_bin_lr_scales(std::as_const(r.params).blocks(), r.params.bins);
  for (size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<ParserSample> batch;
    for (size_t b = 0; b < cfg.batch; ++b) {
      const uint64_t s = draw_seed(cfg.seed, it, b);
      const MixtureDraw d = draw_mixture(corpus, Split::kTrain, cfg.sources, cfg.visible, s);
      batch.push_back(make_parser_sample(d, corpus, stft_cfg, cfg.crop_frames, mix_seed(s, 7)));
    }
    ParserParams grad = ParserParams::zeros(r.params.bins, r.params.channels, r.params.classes);
    const ParserLoss pl = parser_batch_loss(r.params, batch, &grad);
    check_finite(std::as_const(grad).blocks(), "parser gradient at iteration " + std::to_string(it));
    opt.step(r.params.blocks(), std::as_const(grad).blocks(), scales);
    r.history.push_back({it, pl});
  }
  check_finite(std::as_const(r.params).blocks(), "parser parameters");
  return r;
}

void write_history_csv(std::ostream& os, const std::vector<SeparatorHistoryRow>& rows) {
  os << "iter,l_ss,l_triplet,l_total,vis_loss,scn_loss\n";
  for (const auto& r : rows)
    os << r.iter << ',' << format_double(r.loss.l_ss) << ',' << format_double(r.loss.l_triplet) << ','
       << format_double(r.loss.l_total) << ',' << format_double(r.loss.vis_loss) << ','
       << format_double(r.loss.scn_loss) << '\n';
}

void write_history_csv(std::ostream& os, const std::vector<ParserHistoryRow>& rows) {
  os << "iter,loss,visible_loss,audible_loss\n";
  for (const auto& r : rows)
    os << r.iter << ',' << format_double(r.loss.total) << ',' << format_double(r.loss.visible) << ','
       << format_double(r.loss.audible) << '\n';
}

}  // namespace avsa
