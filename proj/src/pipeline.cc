#include "avsa/pipeline.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "avsa/error.h"

namespace avsa {

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

}  // namespace

InferenceResult run_inference(const AudioClip& mixture, const std::vector<std::vector<double>>& visual_feats,
                              const ParserParams& parser, const SeparatorParams& separator,
                              const StftConfig& cfg, double tau) {
  validate_clip(mixture);
  const Spectrogram spec = stft(mixture, cfg);
  const LogMagSpectrogram logmag = log_magnitude(spec);
  InferenceResult r;
  r.labels = parse_scene_logmag(visual_feats, logmag, parser, tau);
  if (r.labels.audible_set.empty()) {
    warn("parser found no audible sources; nothing to separate");
    return r;
  }
  const AudioFeatureGrid features = analyze_audio(logmag, separator);

  const std::vector<double> phi_a = encoder_forward(logmag, parser.visible_audio, parser.channels).output;
  std::vector<std::vector<double>> single_scores;
  for (const auto& v : visual_feats) single_scores.push_back(visible_scores(fuse_visual({v}, parser), phi_a, parser));

  for (size_t c : r.labels.visible_set) {
    ConditionVector cond;
    if (visual_feats.empty()) {
      warn("visible class " + std::to_string(c) + " has no visual feature; using its label");
      cond = align_label(c, separator);
    } else {
      size_t best = 0;
      for (size_t j = 1; j < visual_feats.size(); ++j)
        if (single_scores[j][c] > single_scores[best][c]) best = j;
      cond = visual_condition(visual_feats[best], separator.channels);
    }
    Separation s = separate_with(spec, features, cond, separator);
    r.stems.push_back({c, true, std::move(s.audio), std::move(s.applied_mask)});
  }
  for (size_t c : r.labels.invisible_set) {
    Separation s = separate_with(spec, features, align_label(c, separator), separator);
    r.stems.push_back({c, false, std::move(s.audio), std::move(s.applied_mask)});
  }
  return r;
}

std::vector<AudioClip> baseline_subtract(const AudioClip& mixture, const std::vector<AudioClip>& vis_estimates) {
  AudioClip total(std::vector<double>(mixture.size(), 0.0), mixture.sample_rate);
  for (const auto& e : vis_estimates) {
    if (e.size() != mixture.size())
      throw LengthError("baseline_subtract: estimate has " + std::to_string(e.size()) + " samples, mixture has " +
                        std::to_string(mixture.size()));
    for (size_t t = 0; t < e.size(); ++t) total.samples[t] += e.samples[t];
  }
  std::vector<AudioClip> out;
  for (const auto& e : vis_estimates) {
    AudioClip r(mixture.samples, mixture.sample_rate);
    // sum_{j != i} = total - own estimate
    for (size_t t = 0; t < r.size(); ++t) r.samples[t] -= total.samples[t] - e.samples[t];
    out.push_back(std::move(r));
  }
  return out;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kAvsa: return "avsa";
    case Method::kVisualOnly: return "visual-only";
    case Method::kSemanticOnly: return "semantic-only";
    case Method::kSubtractBaseline: return "subtract-baseline";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::kAvsa, Method::kVisualOnly, Method::kSemanticOnly, Method::kSubtractBaseline})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method '" + name + "'");
}

std::string to_string(EvalCondition condition) {
  switch (condition) {
    case EvalCondition::kTest: return "test";
    case EvalCondition::kTrain: return "train";
    case EvalCondition::kTestPrototype: return "test-prototype";
  }
  return "unknown";
}

EvalCondition eval_condition_from_string(const std::string& name) {
  for (EvalCondition c : {EvalCondition::kTest, EvalCondition::kTrain, EvalCondition::kTestPrototype})
    if (to_string(c) == name) return c;
  throw ConfigError("unknown evaluation condition '" + name + "'");
}

void EvalConfig::validate() const {
  if (mixtures < 1) throw ConfigError("evaluation needs at least one mixture");
  if (visible < 1 || visible > sources) throw ConfigError("evaluation needs 1 <= visible <= sources");
  if (methods.empty()) throw ConfigError("no evaluation methods selected");
  if (conditions.empty()) throw ConfigError("no evaluation conditions selected");
  bss.validate();
}

std::optional<Aggregate> ExperimentReport::find(EvalCondition condition, Method method, bool visible) const {
  for (const auto& a : aggregates)
    if (a.condition == condition && a.method == method && a.visible == visible) return a;
  return std::nullopt;
}

std::vector<Aggregate> aggregate_rows(const std::vector<EvalRow>& rows) {
  std::vector<Aggregate> out;
  for (const EvalRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Aggregate& a) {
      return a.condition == r.condition && a.method == r.method && a.visible == r.visible;
    });
    if (it == out.end()) {
      out.push_back({r.condition, r.method, r.visible, 0.0, 0.0, 0.0, 0});
      it = out.end() - 1;
    }
    it->sdr_db += r.metrics.sdr_db;
    it->sir_db += r.metrics.sir_db;
    it->sar_db += r.metrics.sar_db;
    ++it->n;
  }
  for (Aggregate& a : out) {
    a.sdr_db /= static_cast<double>(a.n);
    a.sir_db /= static_cast<double>(a.n);
    a.sar_db /= static_cast<double>(a.n);
  }
  return out;
}

uint64_t eval_mixture_seed(uint64_t seed, Split split, size_t index) {
  return mix_seed(mix_seed(seed, split == Split::kTest ? 0xE7A1 : 0x7A1E), index);
}

namespace {

const SeparatorParams& model_for(Method method, const ModelSet& models) {
  const SeparatorParams* p = nullptr;
  switch (method) {
    case Method::kAvsa: p = models.joint; break;
    case Method::kVisualOnly:
    case Method::kSubtractBaseline: p = models.visual_only; break;
    case Method::kSemanticOnly: p = models.semantic_only; break;
  }
  if (!p) throw DataError("missing checkpoint for method " + to_string(method));
  return *p;
}

Split split_of(EvalCondition c) { return c == EvalCondition::kTrain ? Split::kTrain : Split::kTest; }

std::vector<std::vector<double>> visual_features(const Corpus& corpus, const MixtureDraw& d, EvalCondition c) {
  std::vector<std::vector<double>> out;
  for (size_t i = 0; i < d.manifest.clip_indices.size(); ++i) {
    if (c == EvalCondition::kTestPrototype)
      out.push_back(corpus.manifest.prototypes[d.manifest.class_ids[i]]);
    else
      out.push_back(pool_frames(corpus.manifest.clips[d.manifest.clip_indices[i]].frames));
  }
  return out;
}

bool parse_is_exact(const SceneLabels& labels, const MixtureManifest& m) {
  std::vector<size_t> vis, aud, inv;
  for (size_t i = 0; i < m.class_ids.size(); ++i) {
    aud.push_back(m.class_ids[i]);
    (m.visible[i] ? vis : inv).push_back(m.class_ids[i]);
  }
  std::sort(vis.begin(), vis.end());
  std::sort(aud.begin(), aud.end());
  std::sort(inv.begin(), inv.end());
  return labels.visible_set == vis && labels.audible_set == aud && labels.invisible_set == inv;
}

bool identity_holds(const SceneLabels& labels) {
  std::vector<size_t> diff;
  std::set_difference(labels.audible_set.begin(), labels.audible_set.end(), labels.visible_set.begin(),
                      labels.visible_set.end(), std::back_inserter(diff));
  return diff == labels.invisible_set;
}

void score_parse(ParserScore& score, const SceneLabels& labels, const MixtureManifest& m) {
  ++score.total;
  if (parse_is_exact(labels, m)) ++score.exact;
  if (identity_holds(labels)) ++score.identity_holds;
}

std::vector<std::vector<double>> visible_only(const std::vector<std::vector<double>>& feats,
                                              const MixtureManifest& m) {
  std::vector<std::vector<double>> out;
  for (size_t i = 0; i < feats.size(); ++i)
    if (m.visible[i]) out.push_back(feats[i]);
  return out;
}

}  // namespace

ParserScore score_parser(const Corpus& corpus, const ParserParams& parser, Split split, size_t mixtures,
                         size_t sources, size_t visible, uint64_t seed, const StftConfig& stft_cfg, double tau) {
  ParserScore score;
  for (size_t i = 0; i < mixtures; ++i) {
    const MixtureDraw d = draw_mixture(corpus, split, sources, visible, eval_mixture_seed(seed, split, i));
    const EvalCondition c = split == Split::kTrain ? EvalCondition::kTrain : EvalCondition::kTest;
    const auto feats = visible_only(visual_features(corpus, d, c), d.manifest);
    score_parse(score, parse_scene(feats, d.mixture, parser, tau, stft_cfg), d.manifest);
  }
  return score;
}

ExperimentReport evaluate(const Corpus& corpus, const ModelSet& models, const EvalConfig& cfg,
                          const StftConfig& stft_cfg) {
  cfg.validate();
  stft_cfg.validate();
  for (Method m : cfg.methods) model_for(m, models);

  ExperimentReport report;
  report.seed = cfg.seed;
  std::map<EvalCondition, ParserScore> parser_scores;

  for (Split split : {Split::kTest, Split::kTrain}) {
    std::vector<EvalCondition> conds;
    for (EvalCondition c : cfg.conditions)
      if (split_of(c) == split) conds.push_back(c);
    if (conds.empty()) continue;

    for (size_t i = 0; i < cfg.mixtures; ++i) {
      const MixtureDraw d = draw_mixture(corpus, split, cfg.sources, cfg.visible, eval_mixture_seed(cfg.seed, split, i));
      const MixtureManifest& mm = d.manifest;
      const size_t m = mm.class_ids.size();
      const SourceScorer scorer(d.stems, cfg.bss);
      const Spectrogram spec = stft(d.mixture, stft_cfg);
      const LogMagSpectrogram logmag = log_magnitude(spec);

      std::map<const SeparatorParams*, AudioFeatureGrid> features;
      auto features_of = [&](const SeparatorParams& p) -> const AudioFeatureGrid& {
        auto it = features.find(&p);
        if (it == features.end()) it = features.emplace(&p, analyze_audio(logmag, p)).first;
        return it->second;
      };
      auto estimate = [&](const SeparatorParams& p, const ConditionVector& c) {
        return separate_with(spec, features_of(p), c, p, cfg.mask_threshold).audio;
      };

      for (EvalCondition cond : conds) {
        const auto feats = visual_features(corpus, d, cond);
        if (models.parser)
          score_parse(parser_scores[cond],
                      parse_scene_logmag(visible_only(feats, mm), logmag, *models.parser, cfg.tau), mm);

        for (Method method : cfg.methods) {
          const SeparatorParams& p = model_for(method, models);
          std::vector<std::optional<AudioClip>> est(m);
          switch (method) {
            case Method::kAvsa:
              for (size_t j = 0; j < m; ++j)
                est[j] = mm.visible[j] ? estimate(p, visual_condition(feats[j], p.channels))
                                       : estimate(p, align_label(mm.class_ids[j], p));
              break;
            case Method::kVisualOnly:
              for (size_t j = 0; j < m; ++j)
                if (mm.visible[j]) est[j] = estimate(p, visual_condition(feats[j], p.channels));
              break;
            case Method::kSemanticOnly:
              for (size_t j = 0; j < m; ++j)
                if (!mm.visible[j]) est[j] = estimate(p, align_label(mm.class_ids[j], p));
              break;
            case Method::kSubtractBaseline: {
              std::vector<AudioClip> vis(m, AudioClip(std::vector<double>(d.mixture.size(), 0.0),
                                                      d.mixture.sample_rate));
              for (size_t j = 0; j < m; ++j)
                if (mm.visible[j]) vis[j] = estimate(p, visual_condition(feats[j], p.channels));
              const std::vector<AudioClip> residual = baseline_subtract(d.mixture, vis);
              for (size_t j = 0; j < m; ++j) est[j] = mm.visible[j] ? vis[j] : residual[j];
              break;
            }
          }
          for (size_t j = 0; j < m; ++j) {
            if (!est[j]) continue;
            EvalRow row;
            row.condition = cond;
            row.method = method;
            row.mixture_id = mm.mixture_id;
            row.source_id = j;
            row.class_id = mm.class_ids[j];
            row.visible = mm.visible[j];
            row.metrics = scorer.score(*est[j], j);
            row.metrics.visible = row.visible;
            report.rows.push_back(std::move(row));
          }
        }
      }
    }
  }

  // Rows were produced split by split; reorder to the configured condition order.
  std::stable_sort(report.rows.begin(), report.rows.end(), [&](const EvalRow& a, const EvalRow& b) {
    auto rank = [&](EvalCondition c) { return std::find(cfg.conditions.begin(), cfg.conditions.end(), c) - cfg.conditions.begin(); };
    auto mrank = [&](Method m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) - cfg.methods.begin(); };
    if (rank(a.condition) != rank(b.condition)) return rank(a.condition) < rank(b.condition);
    return mrank(a.method) < mrank(b.method);
  });
  report.aggregates = aggregate_rows(report.rows);
  if (models.parser)
    for (EvalCondition c : cfg.conditions) report.parser.emplace_back(c, parser_scores[c]);

  nlohmann::json methods = nlohmann::json::array(), conditions = nlohmann::json::array();
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  for (EvalCondition c : cfg.conditions) conditions.push_back(to_string(c));
  report.config = {{"mixtures", cfg.mixtures},
                   {"sources", cfg.sources},
                   {"visible", cfg.visible},
                   {"seed", cfg.seed},
                   {"methods", methods},
                   {"conditions", conditions},
                   {"filter_len", cfg.bss.filter_len},
                   {"clamp_db", cfg.bss.clamp_db},
                   {"mask_threshold", cfg.mask_threshold},
                   {"tau", cfg.tau},
                   {"fft_size", stft_cfg.fft_size},
                   {"hop", stft_cfg.hop},
                   {"window", to_string(stft_cfg.window)},
                   {"sample_rate", stft_cfg.sample_rate}};
  return report;
}

void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows, EvalCondition condition, Method method) {
  write_metrics_csv_header(os);
  for (const EvalRow& r : rows) {
    if (r.condition != condition || r.method != method) continue;
    os << r.mixture_id << ',' << r.source_id << ',' << (r.visible ? "visible" : "invisible") << ','
       << format_double(r.metrics.sdr_db) << ',' << format_double(r.metrics.sir_db) << ','
       << format_double(r.metrics.sar_db) << ',' << r.source_id << '\n';
  }
}

std::string render_table(const std::vector<Aggregate>& aggregates) {
  std::ostringstream os;
  os << "method | visibility | SDR | SIR | n\n";
  char buf[160];
  for (const Aggregate& a : aggregates) {
    std::snprintf(buf, sizeof(buf), "%s | %s | %.2f | %.2f | %zu\n", to_string(a.method).c_str(),
                  a.visible ? "visible" : "invisible", a.sdr_db, a.sir_db, a.n);
    os << buf;
  }
  return os.str();
}

std::string render_report(const ExperimentReport& report) {
  std::ostringstream os;
  std::vector<EvalCondition> order;
  for (const Aggregate& a : report.aggregates)
    if (std::find(order.begin(), order.end(), a.condition) == order.end()) order.push_back(a.condition);
  for (const auto& [c, s] : report.parser)
    if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
  for (EvalCondition c : order) {
    os << "condition: " << to_string(c) << "\n";
    std::vector<Aggregate> sel;
    for (const Aggregate& a : report.aggregates)
      if (a.condition == c) sel.push_back(a);
    os << render_table(sel);
    for (const auto& [pc, s] : report.parser)
      if (pc == c) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "parser exact-set accuracy: %.4f (%zu/%zu)\n", s.accuracy(), s.exact, s.total);
        os << buf;
      }
    os << "\n";
  }
  if (order.empty()) os << render_table({});
  return os.str();
}

nlohmann::json to_json(const ExperimentReport& report) {
  using nlohmann::json;
  json conds = json::array();
  std::vector<EvalCondition> order;
  for (const Aggregate& a : report.aggregates)
    if (std::find(order.begin(), order.end(), a.condition) == order.end()) order.push_back(a.condition);
  for (const auto& [c, s] : report.parser)
    if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
  for (EvalCondition c : order) {
    json aggs = json::array();
    for (const Aggregate& a : report.aggregates)
      if (a.condition == c)
        aggs.push_back({{"method", to_string(a.method)},
                        {"visibility", a.visible ? "visible" : "invisible"},
                        {"sdr_db", a.sdr_db},
                        {"sir_db", a.sir_db},
                        {"sar_db", a.sar_db},
                        {"n", a.n}});
    json entry = {{"condition", to_string(c)}, {"aggregates", aggs}};
    for (const auto& [pc, s] : report.parser)
      if (pc == c)
        entry["parser"] = {{"exact_set_accuracy", s.accuracy()},
                           {"exact", s.exact},
                           {"total", s.total},
                           {"identity_holds", s.identity_holds}};
    conds.push_back(entry);
  }
  return {{"seed", report.seed}, {"config", report.config}, {"conditions", conds}};
}

ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  try {
    r.seed = j.at("seed").get<uint64_t>();
    r.config = j.value("config", nlohmann::json::object());
    for (const auto& entry : j.at("conditions")) {
      const EvalCondition c = eval_condition_from_string(entry.at("condition").get<std::string>());
      for (const auto& a : entry.at("aggregates")) {
        Aggregate g;
        g.condition = c;
        g.method = method_from_string(a.at("method").get<std::string>());
        const std::string vis = a.at("visibility").get<std::string>();
        if (vis != "visible" && vis != "invisible") throw DataError("bad visibility '" + vis + "'");
        g.visible = vis == "visible";
        g.sdr_db = a.at("sdr_db").get<double>();
        g.sir_db = a.at("sir_db").get<double>();
        g.sar_db = a.at("sar_db").get<double>();
        g.n = a.at("n").get<size_t>();
        r.aggregates.push_back(g);
      }
      if (entry.contains("parser")) {
        const auto& p = entry["parser"];
        ParserScore s;
        s.exact = p.at("exact").get<size_t>();
        s.total = p.at("total").get<size_t>();
        s.identity_holds = p.at("identity_holds").get<size_t>();
        r.parser.emplace_back(c, s);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void write_pgm(const std::string& path, const RealGrid& grid) {
  if (grid.frames == 0 || grid.bins == 0) throw DataError("cannot write an empty grid as PGM");
  const auto [lo_it, hi_it] = std::minmax_element(grid.values.begin(), grid.values.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << "P5\n" << grid.frames << " " << grid.bins << "\n255\n";
  std::vector<unsigned char> row(grid.frames);
  for (size_t y = 0; y < grid.bins; ++y) {
    const size_t f = grid.bins - 1 - y;
    for (size_t t = 0; t < grid.frames; ++t) {
      const double v = span > 0.0 ? (grid.at(t, f) - lo) / span : 0.0;
      row[t] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw DataError("failed writing " + path);
}

}  // namespace avsa
