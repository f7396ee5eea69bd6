#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "avsa/audio.h"

namespace avsa {

enum class EnvelopeKind { kSustained, kPlucked, kTremolo };

std::string to_string(EnvelopeKind kind);
EnvelopeKind envelope_kind_from_string(const std::string& name);

// Harmonic instrument-like source class.
struct SourceClassSpec {
  size_t class_id = 0;
  std::string name;
  double fundamental_hz = 110.0;
  size_t partials = 6;
  double decay = 1.0;  // partial p has amplitude p^-decay
  EnvelopeKind envelope = EnvelopeKind::kSustained;
  double vibrato_rate_hz = 0.0;
  double vibrato_depth = 0.0;  // fractional frequency deviation
};

// Per-clip random detune bound, in cents.
inline constexpr double kMaxDetuneCents = 25.0;
inline constexpr double kMaxClipPeak = 0.5;

// Class table for C classes: fundamentals two semitones apart starting at
// 110 Hz, named after the instruments they stand in for.
std::vector<SourceClassSpec> default_class_specs(size_t classes);

// Additive synthesis with an amplitude envelope. Seed controls detune,
// partial phases and gains, onset jitter and peak level (<= 0.5). Samples are
// rounded to float precision so the clip survives a float32 WAV round trip.
AudioClip synth_clip(const SourceClassSpec& spec, uint64_t seed, double duration_s, int sample_rate);

struct CorpusParams {
  size_t classes = 11;
  size_t clips_per_class = 50;
  size_t channels = 32;  // visual feature length k_r
  size_t frames_per_clip = 3;
  uint64_t seed = 1;
  double duration_s = 6.0;
  int sample_rate = 11025;
  double test_fraction = 0.2;
  double feature_noise = 0.1;  // per-entry sigma as a fraction of the prototype norm

  void validate() const;
};

struct ClipRecord {
  std::string clip_id;
  size_t class_id = 0;
  std::string wav;    // path relative to the corpus directory
  std::string split;  // "train" or "test"
  uint64_t seed = 0;
  double duration_s = 0.0;
  std::vector<std::vector<double>> frames;  // per-frame visual features

  std::vector<double> visual_feature() const;  // frames pooled by mean
};

inline constexpr int kManifestSchemaVersion = 1;

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  CorpusParams params;
  std::vector<SourceClassSpec> classes;
  std::vector<std::vector<double>> prototypes;  // per-class visual prototypes
  std::vector<ClipRecord> clips;

  std::vector<std::string> class_names() const;
};

nlohmann::json to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& j);
std::string manifest_to_string(const Manifest& manifest);

enum class Split { kTrain, kTest };
std::string to_string(Split split);

struct Corpus {
  Manifest manifest;
  std::vector<AudioClip> audio;  // aligned with manifest.clips

  std::vector<size_t> clip_indices(Split split) const;
  std::vector<size_t> classes_in(Split split) const;
  size_t classes() const { return manifest.classes.size(); }
  size_t channels() const { return manifest.params.channels; }
};

Corpus generate_corpus(const CorpusParams& params);
// Writes <dir>/manifest.json and <dir>/wav/<clip_id>.wav (float32).
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

struct MixtureManifest {
  std::string mixture_id;
  std::vector<std::string> clip_ids;
  std::vector<size_t> clip_indices;
  std::vector<size_t> class_ids;
  std::vector<bool> visible;  // the first n members
  uint64_t seed = 0;

  size_t visible_count() const;
};

struct MixtureDraw {
  MixtureManifest manifest;
  AudioClip mixture;
  std::vector<AudioClip> stems;
};

// m clips of distinct classes drawn from one split; S_mix = mix(stems).
MixtureDraw draw_mixture(const Corpus& corpus, Split split, size_t m, size_t n, uint64_t seed);

// Deterministic 64-bit mixing of seeds (splitmix64 finalizer).
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace avsa
