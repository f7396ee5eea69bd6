#include "avsa/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "avsa/error.h"

namespace avsa {

std::string to_string(EnvelopeKind kind) {
  switch (kind) {
    case EnvelopeKind::kSustained: return "sustained";
    case EnvelopeKind::kPlucked: return "plucked";
    case EnvelopeKind::kTremolo: return "tremolo";
  }
  return "unknown";
}

EnvelopeKind envelope_kind_from_string(const std::string& name) {
  if (name == "sustained") return EnvelopeKind::kSustained;
  if (name == "plucked") return EnvelopeKind::kPlucked;
  if (name == "tremolo") return EnvelopeKind::kTremolo;
  throw DataError("unknown envelope kind: " + name);
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<SourceClassSpec> default_class_specs(size_t classes) {
  struct Row {
    const char* name;
    size_t partials;
    double decay;
    EnvelopeKind env;
    double vib_rate, vib_depth;
  };
  static const Row kRows[] = {
      {"accordion", 8, 0.8, EnvelopeKind::kTremolo, 0.0, 0.0},
      {"acoustic_guitar", 10, 1.1, EnvelopeKind::kPlucked, 0.0, 0.0},
      {"cello", 8, 1.0, EnvelopeKind::kSustained, 5.5, 0.004},
      {"clarinet", 7, 1.2, EnvelopeKind::kSustained, 0.0, 0.0},
      {"erhu", 8, 1.0, EnvelopeKind::kSustained, 6.0, 0.006},
      {"flute", 4, 1.8, EnvelopeKind::kTremolo, 4.5, 0.002},
      {"saxophone", 9, 0.9, EnvelopeKind::kSustained, 0.0, 0.0},
      {"trumpet", 10, 0.7, EnvelopeKind::kSustained, 0.0, 0.0},
      {"tuba", 5, 1.3, EnvelopeKind::kSustained, 0.0, 0.0},
      {"violin", 8, 1.0, EnvelopeKind::kSustained, 6.5, 0.005},
      {"xylophone", 3, 1.5, EnvelopeKind::kPlucked, 0.0, 0.0},
  };
  constexpr size_t kNamed = sizeof(kRows) / sizeof(kRows[0]);
  std::vector<SourceClassSpec> out;
  for (size_t c = 0; c < classes; ++c) {
    const Row& r = kRows[c % kNamed];
    SourceClassSpec s;
    s.class_id = c;
    s.name = c < kNamed ? r.name : std::string(r.name) + "_" + std::to_string(c / kNamed);
    s.fundamental_hz = 110.0 * std::pow(2.0, 2.0 * static_cast<double>(c) / 12.0);
    s.partials = r.partials;
    s.decay = r.decay;
    s.envelope = r.env;
    s.vibrato_rate_hz = r.vib_rate;
    s.vibrato_depth = r.vib_depth;
    out.push_back(s);
  }
  return out;
}

AudioClip synth_clip(const SourceClassSpec& spec, uint64_t seed, double duration_s, int sample_rate) {
  if (sample_rate <= 0 || !(duration_s > 0.0)) throw ConfigError("synth_clip: bad duration or rate");
  if (spec.partials == 0 || !(spec.fundamental_hz > 0.0)) throw ConfigError("synth_clip: bad class spec");
  const double max_freq = spec.fundamental_hz * std::pow(2.0, kMaxDetuneCents / 1200.0) *
                          (1.0 + spec.vibrato_depth) * static_cast<double>(spec.partials);
  if (max_freq >= 0.5 * sample_rate)
    throw ConfigError("class " + spec.name + ": partial at " + std::to_string(max_freq) +
                      " Hz is not below Nyquist");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const double detune = (2.0 * unit(rng) - 1.0) * kMaxDetuneCents;
  const double f0 = spec.fundamental_hz * std::pow(2.0, detune / 1200.0);
  std::vector<double> amp(spec.partials), phase(spec.partials);
  for (size_t p = 0; p < spec.partials; ++p) {
    amp[p] = std::pow(static_cast<double>(p + 1), -spec.decay) * (0.8 + 0.4 * unit(rng));
    phase[p] = two_pi * unit(rng);
  }
  const double vib_phase = two_pi * unit(rng);
  const double trem_phase = two_pi * unit(rng);
  const double onset = 0.25 * unit(rng);
  const double level = kMaxClipPeak * (0.5 + 0.5 * unit(rng));

  const size_t n = static_cast<size_t>(std::llround(duration_s * sample_rate));
  const double sr = static_cast<double>(sample_rate);
  constexpr double kAttack = 0.02, kRelease = 0.05, kPluckTau = 0.3;

  std::vector<double> x(n, 0.0);
  double theta = 0.0;
  double last_pluck = onset;
  double next_pluck = onset;
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double freq = f0 * (1.0 + spec.vibrato_depth * std::sin(two_pi * spec.vibrato_rate_hz * t + vib_phase));
    theta += two_pi * freq / sr;
    if (t < onset) continue;

    double env = std::min(1.0, (t - onset) / kAttack) * std::min(1.0, (duration_s - t) / kRelease);
    switch (spec.envelope) {
      case EnvelopeKind::kSustained: break;
      case EnvelopeKind::kPlucked:
        if (t >= next_pluck) {
          last_pluck = next_pluck;
          next_pluck += 0.35 + 0.45 * unit(rng);
        }
        env *= std::exp(-(t - last_pluck) / kPluckTau) * std::min(1.0, (t - last_pluck) / 0.005);
        break;
      case EnvelopeKind::kTremolo:
        env *= 1.0 - 0.4 * (0.5 + 0.5 * std::sin(two_pi * 5.5 * t + trem_phase));
        break;
    }
    double s = 0.0;
    for (size_t p = 0; p < spec.partials; ++p) s += amp[p] * std::sin(static_cast<double>(p + 1) * theta + phase[p]);
    x[i] = env * s;
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    const double g = level / peak;
    for (double& v : x) v = static_cast<double>(static_cast<float>(v * g));
  }
  // Float rounding may nudge the peak upwards by an ulp.
  for (double& v : x) v = std::clamp(v, -kMaxClipPeak, kMaxClipPeak);
  return AudioClip(std::move(x), sample_rate);
}

void CorpusParams::validate() const {
  if (classes < 1) throw ConfigError("corpus needs at least one class");
  if (clips_per_class < 1) throw ConfigError("corpus needs at least one clip per class");
  if (channels < 1) throw ConfigError("feature length must be >= 1");
  if (frames_per_clip < 1) throw ConfigError("frames_per_clip must be >= 1");
  if (!(duration_s > 0.0) || sample_rate <= 0) throw ConfigError("bad duration or sample rate");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  if (!(feature_noise >= 0.0)) throw ConfigError("feature_noise must be >= 0");
}

std::vector<double> ClipRecord::visual_feature() const {
  std::vector<double> out(frames.empty() ? 0 : frames.front().size(), 0.0);
  for (const auto& f : frames)
    for (size_t i = 0; i < out.size(); ++i) out[i] += f[i];
  for (double& v : out) v /= static_cast<double>(frames.size());
  return out;
}

std::vector<std::string> Manifest::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

std::vector<size_t> Corpus::clip_indices(Split split) const {
  const std::string s = to_string(split);
  std::vector<size_t> out;
  for (size_t i = 0; i < manifest.clips.size(); ++i)
    if (manifest.clips[i].split == s) out.push_back(i);
  return out;
}

std::vector<size_t> Corpus::classes_in(Split split) const {
  std::vector<bool> seen(classes(), false);
  for (size_t i : clip_indices(split)) seen[manifest.clips[i].class_id] = true;
  std::vector<size_t> out;
  for (size_t c = 0; c < seen.size(); ++c)
    if (seen[c]) out.push_back(c);
  return out;
}

Corpus generate_corpus(const CorpusParams& params) {
  params.validate();
  Corpus corpus;
  Manifest& m = corpus.manifest;
  m.params = params;
  m.classes = default_class_specs(params.classes);

  std::mt19937_64 proto_rng(mix_seed(params.seed, 0x9A07));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (size_t c = 0; c < params.classes; ++c) {
    std::vector<double> p(params.channels);
    for (double& v : p) v = unit(proto_rng);
    m.prototypes.push_back(std::move(p));
  }

  const size_t test_count = static_cast<size_t>(
      std::llround(params.test_fraction * static_cast<double>(params.clips_per_class)));
  for (size_t c = 0; c < params.classes; ++c) {
    const std::vector<double>& proto = m.prototypes[c];
    double norm = 0.0;
    for (double v : proto) norm += v * v;
    norm = std::sqrt(norm);
    for (size_t i = 0; i < params.clips_per_class; ++i) {
      ClipRecord r;
      char id[32];
      std::snprintf(id, sizeof(id), "c%02zu_%03zu", c, i);
      r.clip_id = id;
      r.class_id = c;
      r.wav = "wav/" + r.clip_id + ".wav";
      r.split = i + test_count >= params.clips_per_class ? "test" : "train";
      r.seed = mix_seed(mix_seed(params.seed, c + 1), i);
      r.duration_s = params.duration_s;
      std::mt19937_64 feat_rng(mix_seed(r.seed, 0xF3A7));
      std::normal_distribution<double> noise(0.0, params.feature_noise * norm);
      for (size_t f = 0; f < params.frames_per_clip; ++f) {
        std::vector<double> frame(proto);
        for (double& v : frame) v += noise(feat_rng);
        r.frames.push_back(std::move(frame));
      }
      corpus.audio.push_back(synth_clip(m.classes[c], r.seed, params.duration_s, params.sample_rate));
      m.clips.push_back(std::move(r));
    }
  }
  return corpus;
}

nlohmann::json to_json(const Manifest& m) {
  using nlohmann::json;
  json j;
  j["schema_version"] = m.schema_version;
  const CorpusParams& p = m.params;
  j["params"] = {{"classes", p.classes},
                 {"clips_per_class", p.clips_per_class},
                 {"channels", p.channels},
                 {"frames_per_clip", p.frames_per_clip},
                 {"seed", p.seed},
                 {"duration_s", p.duration_s},
                 {"sample_rate", p.sample_rate},
                 {"test_fraction", p.test_fraction},
                 {"feature_noise", p.feature_noise}};
  json classes = json::array();
  for (const auto& c : m.classes)
    classes.push_back({{"class_id", c.class_id},
                       {"name", c.name},
                       {"fundamental_hz", c.fundamental_hz},
                       {"partials", c.partials},
                       {"decay", c.decay},
                       {"envelope", to_string(c.envelope)},
                       {"vibrato_rate_hz", c.vibrato_rate_hz},
                       {"vibrato_depth", c.vibrato_depth}});
  j["classes"] = classes;
  j["prototypes"] = m.prototypes;
  json clips = json::array();
  for (const auto& r : m.clips)
    clips.push_back({{"clip_id", r.clip_id},
                     {"class_id", r.class_id},
                     {"wav", r.wav},
                     {"split", r.split},
                     {"seed", r.seed},
                     {"duration_s", r.duration_s},
                     {"frames", r.frames}});
  j["clips"] = clips;
  return j;
}

Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion)
      throw DataError("unsupported manifest schema version " + std::to_string(m.schema_version));
    const auto& p = j.at("params");
    m.params.classes = p.at("classes").get<size_t>();
    m.params.clips_per_class = p.at("clips_per_class").get<size_t>();
    m.params.channels = p.at("channels").get<size_t>();
    m.params.frames_per_clip = p.at("frames_per_clip").get<size_t>();
    m.params.seed = p.at("seed").get<uint64_t>();
    m.params.duration_s = p.at("duration_s").get<double>();
    m.params.sample_rate = p.at("sample_rate").get<int>();
    m.params.test_fraction = p.at("test_fraction").get<double>();
    m.params.feature_noise = p.at("feature_noise").get<double>();
    for (const auto& c : j.at("classes")) {
      SourceClassSpec s;
      s.class_id = c.at("class_id").get<size_t>();
      s.name = c.at("name").get<std::string>();
      s.fundamental_hz = c.at("fundamental_hz").get<double>();
      s.partials = c.at("partials").get<size_t>();
      s.decay = c.at("decay").get<double>();
      s.envelope = envelope_kind_from_string(c.at("envelope").get<std::string>());
      s.vibrato_rate_hz = c.at("vibrato_rate_hz").get<double>();
      s.vibrato_depth = c.at("vibrato_depth").get<double>();
      m.classes.push_back(s);
    }
    m.prototypes = j.at("prototypes").get<std::vector<std::vector<double>>>();
    for (const auto& c : j.at("clips")) {
      ClipRecord r;
      r.clip_id = c.at("clip_id").get<std::string>();
      r.class_id = c.at("class_id").get<size_t>();
      r.wav = c.at("wav").get<std::string>();
      r.split = c.at("split").get<std::string>();
      r.seed = c.at("seed").get<uint64_t>();
      r.duration_s = c.at("duration_s").get<double>();
      r.frames = c.at("frames").get<std::vector<std::vector<double>>>();
      if (r.class_id >= m.classes.size()) throw DataError("clip " + r.clip_id + " has an unknown class");
      for (const auto& f : r.frames)
        if (f.size() != m.params.channels) throw DataError("clip " + r.clip_id + " has a bad feature length");
      m.clips.push_back(std::move(r));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

std::string manifest_to_string(const Manifest& manifest) { return to_json(manifest).dump(1) + "\n"; }

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "wav", ec);
  if (ec) throw DataError("cannot create corpus directory " + dir + ": " + ec.message());
  for (size_t i = 0; i < corpus.audio.size(); ++i)
    write_wav((fs::path(dir) / corpus.manifest.clips[i].wav).string(), corpus.audio[i], WavEncoding::kFloat32);
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw DataError("cannot write manifest in " + dir);
  os << manifest_to_string(corpus.manifest);
}

Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw DataError("missing manifest.json in " + dir);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  Corpus corpus;
  corpus.manifest = manifest_from_json(j);
  for (const auto& r : corpus.manifest.clips)
    corpus.audio.push_back(read_wav((fs::path(dir) / r.wav).string(), corpus.manifest.params.sample_rate));
  return corpus;
}

size_t MixtureManifest::visible_count() const {
  return static_cast<size_t>(std::count(visible.begin(), visible.end(), true));
}

MixtureDraw draw_mixture(const Corpus& corpus, Split split, size_t m, size_t n, uint64_t seed) {
  if (m < 1 || n > m) throw ConfigError("mixture needs 1 <= m and n <= m");
  std::vector<std::vector<size_t>> by_class(corpus.classes());
  for (size_t i : corpus.clip_indices(split)) by_class[corpus.manifest.clips[i].class_id].push_back(i);
  std::vector<size_t> classes;
  for (size_t c = 0; c < by_class.size(); ++c)
    if (!by_class[c].empty()) classes.push_back(c);
  if (classes.size() < m)
    throw DataError("insufficient classes: " + to_string(split) + " split has " +
                    std::to_string(classes.size()) + " classes, mixture needs " + std::to_string(m));

  std::mt19937_64 rng(seed);
  std::shuffle(classes.begin(), classes.end(), rng);
  MixtureDraw d;
  d.manifest.mixture_id = to_string(split) + "-" + std::to_string(seed);
  d.manifest.seed = seed;
  for (size_t s = 0; s < m; ++s) {
    const auto& pool = by_class[classes[s]];
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    const size_t idx = pool[pick(rng)];
    d.manifest.clip_indices.push_back(idx);
    d.manifest.clip_ids.push_back(corpus.manifest.clips[idx].clip_id);
    d.manifest.class_ids.push_back(classes[s]);
    d.manifest.visible.push_back(s < n);
    d.stems.push_back(corpus.audio[idx]);
  }
  d.mixture = mix(d.stems);
  return d;
}

}  // namespace avsa
