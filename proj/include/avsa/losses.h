#pragma once

#include <span>
#include <vector>

#include "avsa/stft.h"

namespace avsa {

struct LossConfig {
  double lambda = 1.5;  // visual weight; the semantic branch gets 2 - lambda
  double eta = 1.0;     // triplet coefficient
  double margin = 0.2;  // triplet margin

  void validate() const;
};

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before the log.
inline constexpr double kProbClamp = 1e-7;

// Mean per-cell binary cross-entropy between a binary target and a soft mask.
double mask_loss(const Mask& gt, const Mask& pred);
// Same quantity from logits, evaluated stably; optionally writes dL/dlogit.
double mask_loss_logits(const Mask& gt, const RealGrid& logits, RealGrid* grad_logits = nullptr);

// Mean squared difference between two mask grids.
double mask_distance(const RealGrid& a, const RealGrid& b);

// sum_i lambda * vis_i + (2 - lambda) * scn_i
double separation_loss_from_terms(std::span<const double> vis_terms,
                                  std::span<const double> scn_terms, double lambda);
// One mixture's sources; batch losses are sums of per-mixture losses.
double separation_loss(const std::vector<Mask>& gt, const std::vector<Mask>& vis,
                       const std::vector<Mask>& scn, const LossConfig& cfg);

// Triplet loss with the ground-truth mask as anchor, the same-source mask of
// one branch as positive and the other branch's masks of the remaining
// sources (mean distance over j != i) as negative, in both directions.
// Writes gradients with respect to the mask values when requested.
double triplet_loss(const std::vector<Mask>& gt, const std::vector<RealGrid>& vis,
                    const std::vector<RealGrid>& scn, const LossConfig& cfg,
                    std::vector<RealGrid>* grad_vis = nullptr,
                    std::vector<RealGrid>* grad_scn = nullptr);

double total_loss(const std::vector<Mask>& gt, const std::vector<Mask>& vis,
                  const std::vector<Mask>& scn, const LossConfig& cfg);

}  // namespace avsa
