#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "avsa/error.h"
#include "avsa/pipeline.h"
#include "test_util.h"

namespace avsa {
namespace {

StftConfig small_stft() {
  StftConfig c;
  c.fft_size = 64;
  c.hop = 16;
  c.sample_rate = 4000;
  return c;
}

const Corpus& small_corpus() {
  static const Corpus c = [] {
    CorpusParams p;
    p.classes = 4;
    p.clips_per_class = 5;
    p.channels = 8;
    p.duration_s = 0.4;
    p.sample_rate = 4000;
    p.seed = 9;
    return generate_corpus(p);
  }();
  return c;
}

struct Models {
  SeparatorParams joint, visual, semantic;
  ParserParams parser;
  Models() {
    const Corpus& c = small_corpus();
    const size_t bins = small_stft().bins();
    joint = SeparatorParams::init(bins, c.channels(), c.classes(), 1);
    visual = SeparatorParams::init(bins, c.channels(), c.classes(), 2);
    semantic = SeparatorParams::init(bins, c.channels(), c.classes(), 3);
    parser = ParserParams::init(bins, c.channels(), c.classes(), 4);
  }
  ModelSet set() const { return {&joint, &visual, &semantic, &parser}; }
};

EvalConfig small_eval() {
  EvalConfig e;
  e.mixtures = 3;
  e.bss.filter_len = 32;
  e.conditions = {EvalCondition::kTest, EvalCondition::kTrain};
  return e;
}

TEST(BaselineSubtract, PerfectVisibleEstimatesLeaveTheRest) {
  const AudioClip a = testing::noise_clip(200, 1), b = testing::noise_clip(200, 2), c = testing::noise_clip(200, 3);
  const AudioClip mixture = mix({a, b, c});
  const AudioClip silent(std::vector<double>(200, 0.0), a.sample_rate);
  const auto out = baseline_subtract(mixture, {a, silent, silent});
  ASSERT_EQ(out.size(), 3u);
  for (size_t t = 0; t < 200; ++t) {
    EXPECT_NEAR(out[0].samples[t], mixture.samples[t], 1e-15);
    EXPECT_NEAR(out[1].samples[t], b.samples[t] + c.samples[t], 1e-15);
    EXPECT_NEAR(out[2].samples[t], b.samples[t] + c.samples[t], 1e-15);
  }
}

// With two invisible sources the residual holds both at equal level, so its
// SIR against either one sits near 0 dB.
TEST(BaselineSubtract, TwoInvisibleSourcesGiveSirNearZero) {
  const AudioClip a = testing::noise_clip(4000, 11), b = testing::noise_clip(4000, 12), c = testing::noise_clip(4000, 13);
  const AudioClip mixture = mix({a, b, c});
  const AudioClip silent(std::vector<double>(4000, 0.0), a.sample_rate);
  const auto out = baseline_subtract(mixture, {a, silent, silent});
  BssEvalConfig cfg;
  cfg.filter_len = 32;
  const SourceScorer scorer({a, b, c}, cfg);
  EXPECT_NEAR(scorer.score(out[1], 1).sir_db, 0.0, 0.5);
  EXPECT_NEAR(scorer.score(out[2], 2).sir_db, 0.0, 0.5);
}

TEST(BaselineSubtract, ZeroEstimatesReturnTheMixtureAndLengthsMustMatch) {
  const AudioClip mixture = testing::noise_clip(100, 4);
  const AudioClip silent(std::vector<double>(100, 0.0), mixture.sample_rate);
  for (const auto& r : baseline_subtract(mixture, {silent, silent})) EXPECT_EQ(r.samples, mixture.samples);
  EXPECT_TRUE(baseline_subtract(mixture, {}).empty());
  const AudioClip shorter(std::vector<double>(99, 0.0), mixture.sample_rate);
  EXPECT_THROW(baseline_subtract(mixture, {silent, shorter}), LengthError);
}

TEST(Names, RoundTrip) {
  for (Method m : {Method::kAvsa, Method::kVisualOnly, Method::kSemanticOnly, Method::kSubtractBaseline})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  for (EvalCondition c : {EvalCondition::kTest, EvalCondition::kTrain, EvalCondition::kTestPrototype})
    EXPECT_EQ(eval_condition_from_string(to_string(c)), c);
  EXPECT_THROW(method_from_string("oracle"), ConfigError);
  EXPECT_THROW(eval_condition_from_string("valid"), ConfigError);
}

TEST(RunInference, RoutesVisibleAndInvisibleClasses) {
  const Corpus& corpus = small_corpus();
  Models models;
  // Large parser biases force every class audible and classes 0 and 2 visible.
  models.parser.audible_b.data.assign(corpus.classes(), 40.0);
  models.parser.visible_b.data.assign(corpus.classes(), -40.0);
  models.parser.visible_b[0] = 40.0;
  models.parser.visible_b[2] = 40.0;
  const MixtureDraw d = draw_mixture(corpus, Split::kTest, 2, 1, 3);
  const std::vector<std::vector<double>> feats{pool_frames(corpus.manifest.clips[d.manifest.clip_indices[0]].frames)};
  const InferenceResult r = run_inference(d.mixture, feats, models.parser, models.joint, small_stft());
  EXPECT_EQ(r.labels.visible_set, (std::vector<size_t>{0, 2}));
  EXPECT_EQ(r.labels.invisible_set, (std::vector<size_t>{1, 3}));
  ASSERT_EQ(r.stems.size(), 4u);
  const std::vector<size_t> order{0, 2, 1, 3};
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.stems[i].class_id, order[i]);
    EXPECT_EQ(r.stems[i].visible, i < 2);
    EXPECT_EQ(r.stems[i].audio.size(), d.mixture.size());
  }
  // Invisible stems use the aligned label of their class.
  const Separation s = separate(d.mixture, align_label(1, models.joint), models.joint, small_stft());
  EXPECT_EQ(r.stems[2].audio.samples, s.audio.samples);
  // Visible stems use the only visual feature available.
  const Separation v = separate(d.mixture, visual_condition(feats[0], corpus.channels()), models.joint, small_stft());
  EXPECT_EQ(r.stems[0].audio.samples, v.audio.samples);
}

TEST(RunInference, EmptyAudibleSetYieldsNoStems) {
  const Corpus& corpus = small_corpus();
  Models models;
  models.parser.audible_b.data.assign(corpus.classes(), -40.0);
  const MixtureDraw d = draw_mixture(corpus, Split::kTest, 2, 1, 4);
  const InferenceResult r = run_inference(d.mixture, {}, models.parser, models.joint, small_stft());
  EXPECT_TRUE(r.labels.audible_set.empty());
  EXPECT_TRUE(r.stems.empty());
}

TEST(Evaluate, AggregatesAreRowMeansAndCsvMatches) {
  Models models;
  const ExperimentReport rep = evaluate(small_corpus(), models.set(), small_eval(), small_stft());
  ASSERT_FALSE(rep.rows.empty());
  for (const Aggregate& a : rep.aggregates) {
    double sdr = 0.0, sir = 0.0;
    size_t n = 0;
    for (const EvalRow& r : rep.rows)
      if (r.condition == a.condition && r.method == a.method && r.visible == a.visible) {
        sdr += r.metrics.sdr_db;
        sir += r.metrics.sir_db;
        ++n;
      }
    EXPECT_EQ(a.n, n);
    EXPECT_NEAR(a.sdr_db, sdr / n, 1e-12);
    EXPECT_NEAR(a.sir_db, sir / n, 1e-12);
  }
  // 3 mixtures x (1 visible + 2 invisible).
  const auto avsa_vis = rep.find(EvalCondition::kTest, Method::kAvsa, true);
  const auto avsa_inv = rep.find(EvalCondition::kTest, Method::kAvsa, false);
  ASSERT_TRUE(avsa_vis && avsa_inv);
  EXPECT_EQ(avsa_vis->n, 3u);
  EXPECT_EQ(avsa_inv->n, 6u);
  EXPECT_FALSE(rep.find(EvalCondition::kTest, Method::kVisualOnly, false));
  EXPECT_FALSE(rep.find(EvalCondition::kTest, Method::kSemanticOnly, true));
  EXPECT_FALSE(rep.find(EvalCondition::kTestPrototype, Method::kAvsa, true));

  std::ostringstream csv;
  write_eval_csv(csv, rep.rows, EvalCondition::kTest, Method::kAvsa);
  std::istringstream is(csv.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("mixture_id,", 0), 0u);
  size_t lines = 0;
  double sdr_sum = 0.0;
  while (std::getline(is, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    ASSERT_EQ(cols.size(), 7u);
    sdr_sum += std::stod(cols[3]);
    ++lines;
  }
  EXPECT_EQ(lines, 9u);
  const double mean_all = (avsa_vis->sdr_db * 3 + avsa_inv->sdr_db * 6) / 9.0;
  EXPECT_NEAR(sdr_sum / 9.0, mean_all, 1e-6);
}

// Changing one method's model leaves the other methods' numbers alone.
TEST(Evaluate, MethodsReadOnlyTheirOwnCheckpoint) {
  Models a, b;
  b.semantic = SeparatorParams::init(a.semantic.bins, a.semantic.channels, a.semantic.classes, 77);
  EvalConfig cfg = small_eval();
  cfg.conditions = {EvalCondition::kTest};
  const ExperimentReport ra = evaluate(small_corpus(), a.set(), cfg, small_stft());
  const ExperimentReport rb = evaluate(small_corpus(), b.set(), cfg, small_stft());
  for (Method m : {Method::kAvsa, Method::kVisualOnly, Method::kSubtractBaseline})
    for (bool vis : {true, false}) {
      const auto x = ra.find(EvalCondition::kTest, m, vis), y = rb.find(EvalCondition::kTest, m, vis);
      ASSERT_EQ(x.has_value(), y.has_value());
      if (x) {
        EXPECT_EQ(x->sdr_db, y->sdr_db);
      }
    }
  EXPECT_NE(ra.find(EvalCondition::kTest, Method::kSemanticOnly, false)->sdr_db,
            rb.find(EvalCondition::kTest, Method::kSemanticOnly, false)->sdr_db);
}

TEST(Evaluate, MissingCheckpointIsDataError) {
  Models models;
  ModelSet set = models.set();
  set.semantic_only = nullptr;
  EXPECT_THROW(evaluate(small_corpus(), set, small_eval(), small_stft()), DataError);
  EvalConfig cfg = small_eval();
  cfg.methods = {Method::kAvsa};
  EXPECT_NO_THROW(evaluate(small_corpus(), set, cfg, small_stft()));
  cfg.visible = 4;
  EXPECT_THROW(evaluate(small_corpus(), set, cfg, small_stft()), ConfigError);
}

TEST(Evaluate, Deterministic) {
  Models models;
  const auto a = to_json(evaluate(small_corpus(), models.set(), small_eval(), small_stft())).dump();
  const auto b = to_json(evaluate(small_corpus(), models.set(), small_eval(), small_stft())).dump();
  EXPECT_EQ(a, b);
}

TEST(Evaluate, ParserScoresAndIdentity) {
  Models models;
  const ExperimentReport rep = evaluate(small_corpus(), models.set(), small_eval(), small_stft());
  ASSERT_EQ(rep.parser.size(), 2u);
  for (const auto& [c, s] : rep.parser) {
    EXPECT_EQ(s.total, 3u);
    EXPECT_EQ(s.identity_holds, s.total);
  }
  const ParserScore s = score_parser(small_corpus(), models.parser, Split::kTest, 4, 2, 1, 5, small_stft());
  EXPECT_EQ(s.total, 4u);
  EXPECT_EQ(s.identity_holds, 4u);
}

TEST(Report, JsonRoundTripAndRendering) {
  Models models;
  EvalConfig cfg = small_eval();
  cfg.conditions = {EvalCondition::kTest, EvalCondition::kTestPrototype};
  const ExperimentReport rep = evaluate(small_corpus(), models.set(), cfg, small_stft());
  const nlohmann::json j = to_json(rep);
  const ExperimentReport back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_EQ(render_report(back), render_report(rep));
  EXPECT_NE(render_report(rep).find("condition: test-prototype"), std::string::npos);
  EXPECT_NE(render_report(rep).find("parser exact-set accuracy"), std::string::npos);
  EXPECT_THROW(report_from_json(nlohmann::json::parse("{\"conditions\": 3}")), DataError);
}

TEST(Report, TableLayout) {
  EXPECT_EQ(render_table({}), "method | visibility | SDR | SIR | n\n");
  Aggregate a;
  a.method = Method::kSemanticOnly;
  a.visible = false;
  a.sdr_db = 1.234;
  a.sir_db = -5.0;
  a.n = 7;
  EXPECT_EQ(render_table({a}), "method | visibility | SDR | SIR | n\nsemantic-only | invisible | 1.23 | -5.00 | 7\n");
  EXPECT_EQ(render_report(ExperimentReport{}), "method | visibility | SDR | SIR | n\n");
}

TEST(Pgm, HeaderAndOrientation) {
  RealGrid g(3, 2);  // 3 frames, 2 bins
  g.values = {0.0, 1.0, 0.0, 1.0, 0.0, 0.5};
  const auto path = (std::filesystem::temp_directory_path() / "avsa_test.pgm").string();
  write_pgm(path, g);
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  size_t w, h, maxv;
  is >> magic >> w >> h >> maxv;
  is.get();
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 3u);
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(maxv, 255u);
  std::vector<unsigned char> px(6);
  is.read(reinterpret_cast<char*>(px.data()), 6);
  ASSERT_TRUE(is);
  // Top row is the highest bin.
  EXPECT_EQ(px[0], 255);
  EXPECT_EQ(px[2], 128);
  EXPECT_EQ(px[3], 0);
  EXPECT_EQ(px[5], 0);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace avsa
