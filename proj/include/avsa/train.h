#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "avsa/losses.h"
#include "avsa/parser.h"
#include "avsa/separator.h"
#include "avsa/stft.h"
#include "avsa/synth.h"

namespace avsa {

enum class TrainMode { kJoint, kVisualOnly, kSemanticOnly };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

// visual-only: lambda = 2, eta = 0. semantic-only: lambda = 0, eta = 0.
LossConfig effective_loss_config(const LossConfig& cfg, TrainMode mode);

struct TrainConfig {
  size_t batch = 4;    // mixtures per step
  size_t sources = 3;  // m
  size_t visible = 1;  // n
  size_t iterations = 300;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::string optimizer = "sgd-momentum";
  uint64_t seed = 1;
  size_t crop_frames = 64;  // random STFT-frame crop per mixture; 0 keeps whole clips
  // Per-bin blocks (the lifts) see the mean-per-cell loss through one bin
  // each; their step is multiplied by the bin count when set.
  bool scale_per_bin_lr = true;

  void validate() const;
};

// One supervised mixture for the separator: mixture log magnitude, binary
// ground-truth masks and both conditioning signals per source.
struct SeparatorSample {
  RealGrid logmag;
  std::vector<Mask> gt;
  std::vector<std::vector<double>> visual;  // pooled frame features per source
  std::vector<size_t> classes;
};

struct ParserSample {
  RealGrid logmag;
  std::vector<std::vector<double>> visual;  // visible sources only
  std::vector<double> visible_target;
  std::vector<double> audible_target;
};

// Visible target: classes of the visible members. Audible: all members.
std::pair<std::vector<double>, std::vector<double>> parser_targets(const std::vector<size_t>& classes,
                                                                   const std::vector<bool>& visible,
                                                                   size_t num_classes);

// Cuts the same random frame window out of the mixture and every stem.
SeparatorSample make_separator_sample(const MixtureDraw& draw, const Corpus& corpus,
                                      const StftConfig& cfg, size_t crop_frames, uint64_t crop_seed);
ParserSample make_parser_sample(const MixtureDraw& draw, const Corpus& corpus, const StftConfig& cfg,
                                size_t crop_frames, uint64_t crop_seed);

struct LossBreakdown {
  double l_ss = 0.0;
  double l_triplet = 0.0;
  double l_total = 0.0;
  double vis_loss = 0.0;  // mean per-source mask loss, visual branch
  double scn_loss = 0.0;  // same, semantic branch
};

// L_total summed over every source of every sample; accumulates dL/dparams
// into *grad when given. Branches whose weight is zero are skipped.
LossBreakdown separator_batch_loss(const SeparatorParams& params,
                                   const std::vector<SeparatorSample>& samples,
                                   const LossConfig& cfg, SeparatorParams* grad = nullptr);

struct ParserLoss {
  double total = 0.0;
  double visible = 0.0;
  double audible = 0.0;
};

// Mean-per-class BCE of both heads, summed over samples.
ParserLoss parser_batch_loss(const ParserParams& params, const std::vector<ParserSample>& samples,
                             ParserParams* grad = nullptr);

// Momentum SGD: v = mu * v + g; p -= lr * v.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), mu_(momentum) {}
  // scales[b] multiplies the learning rate of block b; empty means all 1.
  void step(std::vector<NamedTensor> params, const std::vector<ConstNamedTensor>& grads,
            const std::vector<double>& scales = {});

 private:
  double lr_;
  double mu_;
  std::vector<std::vector<double>> velocity_;
};

// Learning-rate multipliers: `bins` for blocks shaped [bins, ...] whose name
// contains "lift_", 1 elsewhere.
std::vector<double> per_bin_lr_scales(const std::vector<ConstNamedTensor>& blocks, size_t bins);

// Throws NumericError naming the first block holding a non-finite value.
void check_finite(const std::vector<ConstNamedTensor>& blocks, const std::string& what);

// Both separator branches resolve to the same parameter instance.
struct BranchView {
  const SeparatorParams* params = nullptr;
  ConditionKind kind = ConditionKind::kVisual;
};
BranchView visual_branch(const SeparatorParams& params);
BranchView semantic_branch(const SeparatorParams& params);

struct SeparatorHistoryRow {
  size_t iter = 0;
  LossBreakdown loss;
};

struct ParserHistoryRow {
  size_t iter = 0;
  ParserLoss loss;
};

struct SeparatorTrainResult {
  SeparatorParams params;
  std::vector<SeparatorHistoryRow> history;
};

struct ParserTrainResult {
  ParserParams params;
  std::vector<ParserHistoryRow> history;
};

SeparatorTrainResult train_separator(const Corpus& corpus, const TrainConfig& cfg, const LossConfig& loss,
                                     TrainMode mode, const StftConfig& stft_cfg);
ParserTrainResult train_parser(const Corpus& corpus, const TrainConfig& cfg, const StftConfig& stft_cfg);

void write_history_csv(std::ostream& os, const std::vector<SeparatorHistoryRow>& rows);
void write_history_csv(std::ostream& os, const std::vector<ParserHistoryRow>& rows);

}  // namespace avsa
