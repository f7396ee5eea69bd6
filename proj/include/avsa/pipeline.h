#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "avsa/bss_eval.h"
#include "avsa/parser.h"
#include "avsa/separator.h"
#include "avsa/synth.h"

namespace avsa {

struct Stem {
  size_t class_id = 0;
  bool visible = true;
  AudioClip audio;
  Mask mask;
};

struct InferenceResult {
  SceneLabels labels;
  std::vector<Stem> stems;  // visible classes first, then invisible, ascending ids
};

// Parses the scene, then separates each visible class with a visual feature
// and each invisible class with its aligned label. A visible class takes the
// visual feature whose single-object visible score for it is highest.
InferenceResult run_inference(const AudioClip& mixture, const std::vector<std::vector<double>>& visual_feats,
                              const ParserParams& parser, const SeparatorParams& separator,
                              const StftConfig& cfg, double tau = kDefaultSceneThreshold);

// out[i] = mixture - sum_{j != i} vis_estimates[j]. Sources without a visual
// estimate pass a silent clip.
std::vector<AudioClip> baseline_subtract(const AudioClip& mixture, const std::vector<AudioClip>& vis_estimates);

enum class Method { kAvsa, kVisualOnly, kSemanticOnly, kSubtractBaseline };
std::string to_string(Method method);
Method method_from_string(const std::string& name);

// test: held-out mixtures with their own noisy frame features. train: mixtures
// from the training split. test-prototype: test mixtures with every visual
// feature replaced by its class prototype.
enum class EvalCondition { kTest, kTrain, kTestPrototype };
std::string to_string(EvalCondition condition);
EvalCondition eval_condition_from_string(const std::string& name);

struct EvalConfig {
  size_t mixtures = 50;
  size_t sources = 3;
  size_t visible = 1;
  uint64_t seed = 1;
  std::vector<Method> methods{Method::kAvsa, Method::kVisualOnly, Method::kSemanticOnly,
                              Method::kSubtractBaseline};
  std::vector<EvalCondition> conditions{EvalCondition::kTest};
  BssEvalConfig bss;
  double mask_threshold = kMaskThreshold;
  double tau = kDefaultSceneThreshold;

  void validate() const;
};

// avsa reads `joint`; visual-only and subtract-baseline read `visual_only`;
// semantic-only reads `semantic_only`. The parser is optional.
struct ModelSet {
  const SeparatorParams* joint = nullptr;
  const SeparatorParams* visual_only = nullptr;
  const SeparatorParams* semantic_only = nullptr;
  const ParserParams* parser = nullptr;
};

struct EvalRow {
  EvalCondition condition = EvalCondition::kTest;
  Method method = Method::kAvsa;
  std::string mixture_id;
  size_t source_id = 0;
  size_t class_id = 0;
  bool visible = true;
  SourceMetrics metrics;
};

struct Aggregate {
  EvalCondition condition = EvalCondition::kTest;
  Method method = Method::kAvsa;
  bool visible = true;
  double sdr_db = 0.0;
  double sir_db = 0.0;
  double sar_db = 0.0;
  size_t n = 0;
};

struct ParserScore {
  size_t total = 0;
  size_t exact = 0;           // visible, audible and invisible sets all correct
  size_t identity_holds = 0;  // invisible == audible \ visible
  double accuracy() const { return total ? static_cast<double>(exact) / static_cast<double>(total) : 0.0; }
};

struct ExperimentReport {
  uint64_t seed = 0;
  nlohmann::json config;
  std::vector<EvalRow> rows;
  std::vector<Aggregate> aggregates;
  std::vector<std::pair<EvalCondition, ParserScore>> parser;

  // Mean over the matching rows; nullopt when there are none.
  std::optional<Aggregate> find(EvalCondition condition, Method method, bool visible) const;
};

// Means by (condition, method, visibility) in the order rows first appear.
std::vector<Aggregate> aggregate_rows(const std::vector<EvalRow>& rows);

ExperimentReport evaluate(const Corpus& corpus, const ModelSet& models, const EvalConfig& cfg,
                          const StftConfig& stft_cfg);

// Exact-set accuracy of the parser on drawn mixtures of one split.
ParserScore score_parser(const Corpus& corpus, const ParserParams& parser, Split split, size_t mixtures,
                         size_t sources, size_t visible, uint64_t seed, const StftConfig& stft_cfg,
                         double tau = kDefaultSceneThreshold);

void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows, EvalCondition condition, Method method);

// Columns method | visibility | SDR | SIR | n.
std::string render_table(const std::vector<Aggregate>& aggregates);
std::string render_report(const ExperimentReport& report);
nlohmann::json to_json(const ExperimentReport& report);
// Aggregates, parser scores, seed and config; per-source rows are not stored.
ExperimentReport report_from_json(const nlohmann::json& j);

// 8-bit binary PGM, width = frames, height = bins (low frequencies at the
// bottom), min-max scaled.
void write_pgm(const std::string& path, const RealGrid& grid);

uint64_t eval_mixture_seed(uint64_t seed, Split split, size_t index);

}  // namespace avsa
