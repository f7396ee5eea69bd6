#include "avsa/losses.h"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "avsa/error.h"
#include "avsa/tensor.h"

namespace avsa {

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 2.0)) throw ConfigError("lambda must lie in [0, 2]");
  if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0");
  if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
}

namespace {

void check_same(const RealGrid& a, const RealGrid& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": " + std::to_string(a.frames) + "x" + std::to_string(a.bins) +
                     " vs " + std::to_string(b.frames) + "x" + std::to_string(b.bins));
}

}  // namespace

double mask_loss(const Mask& gt, const Mask& pred) {
  check_same(gt, pred, "mask_loss");
  if (gt.size() == 0) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < gt.size(); ++i) {
    const double p = std::clamp(pred.values[i], kProbClamp, 1.0 - kProbClamp);
    const double g = gt.values[i];
    acc -= g * std::log(p) + (1.0 - g) * std::log1p(-p);
  }
  return acc / static_cast<double>(gt.size());
}

double mask_loss_logits(const Mask& gt, const RealGrid& logits, RealGrid* grad_logits) {
  check_same(gt, logits, "mask_loss_logits");
  const double n = static_cast<double>(gt.size());
  if (grad_logits) *grad_logits = RealGrid(gt.frames, gt.bins);
  double acc = 0.0;
  for (size_t i = 0; i < gt.size(); ++i) {
    const double z = logits.values[i];
    const double g = gt.values[i];
    // -[g log s(z) + (1-g) log(1-s(z))] = softplus(z) - g z
    acc += softplus(z) - g * z;
    if (grad_logits) grad_logits->values[i] = (sigmoid(z) - g) / n;
  }
  return gt.size() ? acc / n : 0.0;
}

double mask_distance(const RealGrid& a, const RealGrid& b) {
  check_same(a, b, "mask_distance");
  if (a.size() == 0) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double separation_loss_from_terms(std::span<const double> vis_terms,
                                  std::span<const double> scn_terms, double lambda) {
  if (vis_terms.size() != scn_terms.size()) throw LengthError("separation_loss: branch term counts differ");
  double acc = 0.0;
  for (size_t i = 0; i < vis_terms.size(); ++i) acc += lambda * vis_terms[i] + (2.0 - lambda) * scn_terms[i];
  return acc;
}

double separation_loss(const std::vector<Mask>& gt, const std::vector<Mask>& vis,
                       const std::vector<Mask>& scn, const LossConfig& cfg) {
  cfg.validate();
  if (vis.size() != gt.size() || scn.size() != gt.size())
    throw LengthError("separation_loss: mask list lengths differ");
  std::vector<double> v(gt.size()), s(gt.size());
  for (size_t i = 0; i < gt.size(); ++i) {
    v[i] = mask_loss(gt[i], vis[i]);
    s[i] = mask_loss(gt[i], scn[i]);
  }
  return separation_loss_from_terms(v, s, cfg.lambda);
}

double triplet_loss(const std::vector<Mask>& gt, const std::vector<RealGrid>& vis,
                    const std::vector<RealGrid>& scn, const LossConfig& cfg,
                    std::vector<RealGrid>* grad_vis, std::vector<RealGrid>* grad_scn) {
  cfg.validate();
  const size_t m = gt.size();
  if (vis.size() != m || scn.size() != m) throw LengthError("triplet_loss: mask list lengths differ");
  if (grad_vis) {
    grad_vis->clear();
    for (const auto& g : gt) grad_vis->emplace_back(g.frames, g.bins);
  }
  if (grad_scn) {
    grad_scn->clear();
    for (const auto& g : gt) grad_scn->emplace_back(g.frames, g.bins);
  }
  if (m < 2) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "warning: triplet loss needs at least two sources per mixture; using 0\n";
      warned = true;
    }
    return 0.0;
  }
  if (cfg.eta == 0.0) return 0.0;

  // d(gt_i, x) = mean (x - gt_i)^2, so dd/dx = 2 (x - gt_i) / N.
  auto add_grad = [](RealGrid& grad, const RealGrid& x, const RealGrid& anchor, double scale) {
    const double k = 2.0 * scale / static_cast<double>(x.size());
    for (size_t c = 0; c < x.size(); ++c) grad.values[c] += k * (x.values[c] - anchor.values[c]);
  };

  double total = 0.0;
  const double neg_w = 1.0 / static_cast<double>(m - 1);
  for (size_t i = 0; i < m; ++i) {
    double neg_scn = 0.0, neg_vis = 0.0;
    for (size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      neg_scn += mask_distance(gt[i], scn[j]);
      neg_vis += mask_distance(gt[i], vis[j]);
    }
    neg_scn *= neg_w;
    neg_vis *= neg_w;

    const double h1 = mask_distance(gt[i], vis[i]) - neg_scn + cfg.margin;
    if (h1 > 0.0) {
      total += cfg.eta * h1;
      if (grad_vis) add_grad((*grad_vis)[i], vis[i], gt[i], cfg.eta);
      if (grad_scn)
        for (size_t j = 0; j < m; ++j)
          if (j != i) add_grad((*grad_scn)[j], scn[j], gt[i], -cfg.eta * neg_w);
    }
    const double h2 = mask_distance(gt[i], scn[i]) - neg_vis + cfg.margin;
    if (h2 > 0.0) {
      total += cfg.eta * h2;
      if (grad_scn) add_grad((*grad_scn)[i], scn[i], gt[i], cfg.eta);
      if (grad_vis)
        for (size_t j = 0; j < m; ++j)
          if (j != i) add_grad((*grad_vis)[j], vis[j], gt[i], -cfg.eta * neg_w);
    }
  }
  return total;
}

double total_loss(const std::vector<Mask>& gt, const std::vector<Mask>& vis,
                  const std::vector<Mask>& scn, const LossConfig& cfg) {
  std::vector<RealGrid> v(vis.begin(), vis.end()), s(scn.begin(), scn.end());
  return separation_loss(gt, vis, scn, cfg) + triplet_loss(gt, v, s, cfg);
}

}  // namespace avsa
