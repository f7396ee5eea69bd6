#pragma once

// Central-difference audit of every analytic gradient used in training.
// Shared by the unit tests and the acceptance binary.

#include <string>
#include <vector>

#include "avsa/losses.h"
#include "avsa/synth.h"
#include "avsa/train.h"
#include "test_util.h"

namespace avsa::testing {

struct GradCheck {
  std::string what;
  double rel_err = 0.0;
};

inline StftConfig audit_stft() {
  StftConfig c;
  c.fft_size = 32;
  c.hop = 8;
  c.sample_rate = 4000;
  return c;
}

inline CorpusParams audit_corpus_params(uint64_t seed) {
  CorpusParams p;
  p.classes = 4;
  p.clips_per_class = 3;
  p.channels = 6;
  p.duration_s = 0.25;
  p.sample_rate = 4000;
  p.seed = seed;
  return p;
}

// Random parameters at a scale where ReLUs are mixed and sigmoids are
// not saturated.
inline SeparatorParams audit_separator(size_t bins, size_t channels, size_t classes, uint64_t seed) {
  SeparatorParams p = SeparatorParams::init(bins, channels, classes, seed);
  auto fill = [&](Tensor& t, uint64_t s, double scale) {
    t.data = random_vector(t.size(), s, -scale, scale);
  };
  fill(p.lift_b, seed + 1, 0.5);
  fill(p.conv_b, seed + 2, 0.2);
  fill(p.out_w, seed + 3, 0.6);
  fill(p.out_b, seed + 4, 0.3);
  fill(p.align_b, seed + 5, 0.5);
  fill(p.synth_b, seed + 6, 0.3);
  return p;
}

inline ParserParams audit_parser(size_t bins, size_t channels, size_t classes, uint64_t seed) {
  ParserParams p = ParserParams::init(bins, channels, classes, seed);
  size_t k = 0;
  for (auto& [name, t] : p.blocks())
    if (name.find("_b") != std::string::npos) t->data = random_vector(t->size(), seed + 10 + k++, -0.3, 0.3);
  return p;
}

// One probe: a fresh tiny corpus, two mixtures, every separator block under
// the joint loss with an active triplet term, every parser block, and the
// loss operators on their own.
inline std::vector<GradCheck> gradient_probe(uint64_t seed) {
  std::vector<GradCheck> out;
  const StftConfig cfg = audit_stft();
  const Corpus corpus = generate_corpus(audit_corpus_params(seed));
  std::vector<SeparatorSample> sep_batch;
  std::vector<ParserSample> parser_batch;
  for (size_t b = 0; b < 2; ++b) {
    const MixtureDraw d = draw_mixture(corpus, Split::kTrain, 3, 1, mix_seed(seed, b));
    sep_batch.push_back(make_separator_sample(d, corpus, cfg, 5, mix_seed(seed, 100 + b)));
    parser_batch.push_back(make_parser_sample(d, corpus, cfg, 5, mix_seed(seed, 200 + b)));
  }

  LossConfig loss;
  loss.eta = 0.5;
  loss.margin = 0.6;  // keeps hinges active
  SeparatorParams sp = audit_separator(cfg.bins(), corpus.channels(), corpus.classes(), seed);
  SeparatorParams sg = SeparatorParams::zeros(sp.bins, sp.channels, sp.classes);
  separator_batch_loss(sp, sep_batch, loss, &sg);
  {
    auto grads = std::as_const(sg).blocks();
    auto params = sp.blocks();
    for (size_t i = 0; i < params.size(); ++i) {
      const double err = gradient_rel_error(*params[i].tensor, *grads[i].tensor,
                                            [&] { return separator_batch_loss(sp, sep_batch, loss).l_total; });
      out.push_back({"separator " + params[i].name, err});
    }
  }

  ParserParams pp = audit_parser(cfg.bins(), corpus.channels(), corpus.classes(), seed);
  ParserParams pg = ParserParams::zeros(pp.bins, pp.channels, pp.classes);
  parser_batch_loss(pp, parser_batch, &pg);
  {
    auto grads = std::as_const(pg).blocks();
    auto params = pp.blocks();
    for (size_t i = 0; i < params.size(); ++i) {
      const double err = gradient_rel_error(*params[i].tensor, *grads[i].tensor,
                                            [&] { return parser_batch_loss(pp, parser_batch).total; });
      out.push_back({params[i].name, err});
    }
  }

  // BCE with sigmoid, on logits.
  {
    const Mask& gt = sep_batch[0].gt[0];
    Tensor z({gt.size()});
    z.data = random_vector(gt.size(), seed + 300, -4.0, 4.0);
    RealGrid logits(gt.frames, gt.bins), g;
    logits.values = z.data;
    mask_loss_logits(gt, logits, &g);
    Tensor a({gt.size()});
    a.data = g.values;
    out.push_back({"op bce-logits", gradient_rel_error(z, a, [&] {
                     logits.values = z.data;
                     return mask_loss_logits(gt, logits);
                   })});
  }
  // MSE distance inside the hinge.
  {
    const std::vector<Mask>& gt = sep_batch[0].gt;
    std::vector<RealGrid> vis, scn;
    for (size_t i = 0; i < gt.size(); ++i) {
      vis.emplace_back(gt[i].frames, gt[i].bins);
      scn.emplace_back(gt[i].frames, gt[i].bins);
      vis.back().values = random_vector(gt[i].size(), seed + 400 + i, 0.05, 0.95);
      scn.back().values = random_vector(gt[i].size(), seed + 500 + i, 0.05, 0.95);
    }
    std::vector<RealGrid> gv, gs;
    triplet_loss(gt, vis, scn, loss, &gv, &gs);
    Tensor x({vis[0].size()}), a({vis[0].size()});
    x.data = vis[0].values;
    a.data = gv[0].values;
    out.push_back({"op triplet-mse-hinge", gradient_rel_error(x, a, [&] {
                     vis[0].values = x.data;
                     return triplet_loss(gt, vis, scn, loss);
                   })});
  }
  return out;
}

}  // namespace avsa::testing
