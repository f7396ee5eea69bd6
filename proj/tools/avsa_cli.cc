// avsa: data generation, training, inference, evaluation and reporting.
//
// Every subcommand accepts --config FILE, a flat key=value file whose keys are
// the long option names of that subcommand. Flags given on the command line
// override file values.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "avsa/checkpoint.h"
#include "avsa/error.h"
#include "avsa/pipeline.h"
#include "avsa/train.h"

namespace fs = std::filesystem;
using namespace avsa;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    out.emplace_back(key, value);
  }
  return out;
}

// Rewrites argv so that `--config FILE` entries become ordinary flags placed
// before the remaining arguments of the subcommand.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  for (size_t i = 1; i < args.size(); ++i) {
    std::string file;
    size_t erase = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      erase = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      erase = 1;
    } else {
      continue;
    }
    args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i + erase));
    // Insert right after the subcommand name (the first non-flag argument).
    size_t at = 1;
    while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
    at = std::min(at + 1, args.size());
    std::vector<std::string> flags;
    for (const auto& [k, v] : read_config_file(file)) {
      flags.push_back("--" + k);
      flags.push_back(v);
    }
    args.insert(args.begin() + static_cast<long>(at), flags.begin(), flags.end());
    break;
  }
  return args;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("write failed for " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// key=value lines in insertion order; the same format --config reads back.
class ConfigEcho {
 public:
  template <typename T>
  void add(const std::string& key, const T& value) {
    std::ostringstream ss;
    if constexpr (std::is_floating_point_v<T>)
      ss << format_double(value);
    else
      ss << value;
    lines_ += key + "=" + ss.str() + "\n";
  }
  const std::string& str() const { return lines_; }

 private:
  std::string lines_;
};

struct StftOpts {
  int fft_size = 1024;
  int hop = 256;
  std::string window = "hann";

  void add_to(CLI::App* app) {
    app->add_option("--fft-size", fft_size, "STFT size");
    app->add_option("--hop", hop, "STFT hop");
    app->add_option("--window", window, "hann, sqrt-hann or rect");
  }
  StftConfig make(int sample_rate) const {
    StftConfig c;
    c.fft_size = fft_size;
    c.hop = hop;
    c.window = window_kind_from_string(window);
    c.sample_rate = sample_rate;
    c.validate();
    return c;
  }
  void echo(ConfigEcho& e) const {
    e.add("fft-size", fft_size);
    e.add("hop", hop);
    e.add("window", window);
  }
};

// ---- gen-data ----

struct GenDataOpts {
  std::string out;
  CorpusParams params;
};

void run_gen_data(const GenDataOpts& o) {
  o.params.validate();
  const Corpus corpus = generate_corpus(o.params);
  save_corpus(corpus, o.out);
  std::cout << "wrote " << corpus.manifest.clips.size() << " clips of " << corpus.classes() << " classes to "
            << o.out << "\n";
}

// ---- train-sep / train-parser ----

struct TrainOpts {
  std::string data;
  std::string run;
  std::string mode = "joint";
  TrainConfig train;
  LossConfig loss;
  StftOpts stft;

  void add_to(CLI::App* app, bool separator) {
    app->add_option("--data", data, "corpus directory")->required();
    app->add_option("--run", run, "run directory")->required();
    if (separator) {
      app->add_option("--mode", mode, "joint, visual-only or semantic-only");
      app->add_option("--lambda", loss.lambda, "visual loss weight; semantic gets 2 - lambda");
      app->add_option("--eta", loss.eta, "triplet loss coefficient");
      app->add_option("--margin", loss.margin, "triplet margin");
    }
    app->add_option("--batch", train.batch, "mixtures per step");
    app->add_option("--sources", train.sources, "sources per mixture (m)");
    app->add_option("--visible", train.visible, "visible sources per mixture (n)");
    app->add_option("--iterations", train.iterations, "optimizer steps");
    app->add_option("--lr", train.learning_rate, "learning rate");
    app->add_option("--momentum", train.momentum, "momentum");
    app->add_option("--optimizer", train.optimizer, "optimizer (sgd-momentum)");
    app->add_option("--seed", train.seed, "training seed");
    app->add_option("--crop-frames", train.crop_frames, "STFT frames per training crop, 0 = whole clip");
    app->add_option("--scale-per-bin-lr", train.scale_per_bin_lr, "multiply per-bin block steps by the bin count");
    stft.add_to(app);
  }

  void echo(ConfigEcho& e, bool separator) const {
    e.add("data", data);
    if (separator) {
      e.add("mode", mode);
      e.add("lambda", loss.lambda);
      e.add("eta", loss.eta);
      e.add("margin", loss.margin);
    }
    e.add("batch", train.batch);
    e.add("sources", train.sources);
    e.add("visible", train.visible);
    e.add("iterations", train.iterations);
    e.add("lr", train.learning_rate);
    e.add("momentum", train.momentum);
    e.add("optimizer", train.optimizer);
    e.add("seed", train.seed);
    e.add("crop-frames", train.crop_frames);
    e.add("scale-per-bin-lr", train.scale_per_bin_lr ? 1 : 0);
    stft.echo(e);
  }
};

void run_train_sep(const TrainOpts& o) {
  const TrainMode mode = train_mode_from_string(o.mode);
  o.train.validate();
  o.loss.validate();
  const Corpus corpus = load_corpus(o.data);
  const StftConfig stft_cfg = o.stft.make(corpus.manifest.params.sample_rate);
  ensure_dir(o.run);
  const std::string stem = "sep-" + to_string(mode);
  ConfigEcho echo;
  o.echo(echo, true);
  write_text(fs::path(o.run) / (stem + ".config.txt"), echo.str());

  std::cerr << "training separator (" << to_string(mode) << "), seed " << o.train.seed << "\n";
  const SeparatorTrainResult r = train_separator(corpus, o.train, o.loss, mode, stft_cfg);
  save_checkpoint((fs::path(o.run) / (stem + ".ckpt")).string(), r.params.blocks());
  std::ostringstream hist;
  write_history_csv(hist, r.history);
  write_text(fs::path(o.run) / (stem + ".history.csv"), hist.str());
  const auto& last = r.history.back().loss;
  std::cout << stem << ": final L_total " << format_double(last.l_total) << "\n";
}

void run_train_parser(const TrainOpts& o) {
  o.train.validate();
  const Corpus corpus = load_corpus(o.data);
  const StftConfig stft_cfg = o.stft.make(corpus.manifest.params.sample_rate);
  ensure_dir(o.run);
  ConfigEcho echo;
  o.echo(echo, false);
  write_text(fs::path(o.run) / "parser.config.txt", echo.str());

  std::cerr << "training parser, seed " << o.train.seed << "\n";
  const ParserTrainResult r = train_parser(corpus, o.train, stft_cfg);
  save_checkpoint((fs::path(o.run) / "parser.ckpt").string(), r.params.blocks());
  std::ostringstream hist;
  write_history_csv(hist, r.history);
  write_text(fs::path(o.run) / "parser.history.csv", hist.str());
  std::cout << "parser: final loss " << format_double(r.history.back().loss.total) << "\n";
}

// ---- infer ----

struct InferOpts {
  std::string mixture;
  std::string visual;
  std::string data;
  uint64_t mixture_seed = 0;
  size_t sources = 3;
  size_t visible = 1;
  std::string parser;
  std::string separator;
  std::string out;
  double tau = kDefaultSceneThreshold;
  StftOpts stft;
};

std::vector<std::vector<double>> read_visual_json(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
    return j.get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed visual feature file " + path + ": " + e.what());
  }
}

void run_infer(const InferOpts& o) {
  const ParserParams parser = ParserParams::from_tensors(load_checkpoint(o.parser));
  const SeparatorParams sep = SeparatorParams::from_tensors(load_checkpoint(o.separator));

  AudioClip mixture;
  std::vector<std::vector<double>> feats;
  std::optional<MixtureDraw> draw;
  std::vector<std::string> class_names;
  if (!o.data.empty()) {
    const Corpus corpus = load_corpus(o.data);
    class_names = corpus.manifest.class_names();
    draw = draw_mixture(corpus, Split::kTest, o.sources, o.visible, o.mixture_seed);
    mixture = draw->mixture;
    for (size_t i = 0; i < draw->manifest.clip_indices.size(); ++i)
      if (draw->manifest.visible[i])
        feats.push_back(corpus.manifest.clips[draw->manifest.clip_indices[i]].visual_feature());
  } else {
    if (o.mixture.empty()) throw ConfigError("infer needs --mixture or --data");
    mixture = read_wav(o.mixture);
    if (!o.visual.empty()) feats = read_visual_json(o.visual);
  }
  const StftConfig stft_cfg = o.stft.make(mixture.sample_rate);
  const InferenceResult r = run_inference(mixture, feats, parser, sep, stft_cfg, o.tau);
  std::optional<SourceScorer> scorer;
  if (draw) scorer.emplace(draw->stems, BssEvalConfig{});

  ensure_dir(o.out);
  write_wav((fs::path(o.out) / "mixture.wav").string(), mixture);
  auto name_of = [&](size_t c) { return c < class_names.size() ? class_names[c] : "class" + std::to_string(c); };
  for (const Stem& s : r.stems) {
    const std::string file = name_of(s.class_id) + (s.visible ? "-visible" : "-invisible") + ".wav";
    write_wav((fs::path(o.out) / file).string(), s.audio);
    std::cout << name_of(s.class_id) << "\t" << (s.visible ? "visible" : "invisible") << "\t" << file;
    if (draw) {
      const auto& ids = draw->manifest.class_ids;
      const auto it = std::find(ids.begin(), ids.end(), s.class_id);
      if (it != ids.end()) {
        const SourceMetrics m = scorer->score(s.audio, static_cast<size_t>(it - ids.begin()));
        std::cout << "\tSDR " << format_double(m.sdr_db) << "\tSIR " << format_double(m.sir_db);
      } else {
        std::cout << "\t(not in mixture)";
      }
    }
    std::cout << "\n";
  }
  if (draw) {
    std::cout << "ground truth:";
    for (size_t i = 0; i < draw->manifest.class_ids.size(); ++i)
      std::cout << " " << name_of(draw->manifest.class_ids[i]) << (draw->manifest.visible[i] ? "(visible)" : "(invisible)");
    std::cout << "\n";
  }
}

// ---- eval ----

struct EvalOpts {
  std::string data;
  std::string run;
  std::string joint, visual_only, semantic_only, parser;
  std::vector<std::string> methods{"avsa", "visual-only", "semantic-only", "subtract-baseline"};
  std::vector<std::string> conditions{"test"};
  EvalConfig eval;
  StftOpts stft;
};

void run_eval(EvalOpts o) {
  const fs::path run(o.run);
  auto default_path = [&](std::string& p, const std::string& file) {
    if (p.empty() && fs::exists(run / file)) p = (run / file).string();
  };
  default_path(o.joint, "sep-joint.ckpt");
  default_path(o.visual_only, "sep-visual-only.ckpt");
  default_path(o.semantic_only, "sep-semantic-only.ckpt");
  default_path(o.parser, "parser.ckpt");

  o.eval.methods.clear();
  for (const auto& m : o.methods) o.eval.methods.push_back(method_from_string(m));
  o.eval.conditions.clear();
  for (const auto& c : o.conditions) o.eval.conditions.push_back(eval_condition_from_string(c));
  o.eval.validate();

  const Corpus corpus = load_corpus(o.data);
  const StftConfig stft_cfg = o.stft.make(corpus.manifest.params.sample_rate);
  std::optional<SeparatorParams> joint, vis, sem;
  std::optional<ParserParams> parser;
  if (!o.joint.empty()) joint = SeparatorParams::from_tensors(load_checkpoint(o.joint));
  if (!o.visual_only.empty()) vis = SeparatorParams::from_tensors(load_checkpoint(o.visual_only));
  if (!o.semantic_only.empty()) sem = SeparatorParams::from_tensors(load_checkpoint(o.semantic_only));
  if (!o.parser.empty()) parser = ParserParams::from_tensors(load_checkpoint(o.parser));
  const ModelSet models{joint ? &*joint : nullptr, vis ? &*vis : nullptr, sem ? &*sem : nullptr,
                        parser ? &*parser : nullptr};

  ConfigEcho echo;
  echo.add("data", o.data);
  echo.add("joint", o.joint);
  echo.add("visual-only", o.visual_only);
  echo.add("semantic-only", o.semantic_only);
  echo.add("parser", o.parser);
  echo.add("mixtures", o.eval.mixtures);
  echo.add("sources", o.eval.sources);
  echo.add("visible", o.eval.visible);
  echo.add("seed", o.eval.seed);
  echo.add("mask-threshold", o.eval.mask_threshold);
  echo.add("tau", o.eval.tau);
  echo.add("filter-len", o.eval.bss.filter_len);
  o.stft.echo(echo);
  ensure_dir(o.run);
  write_text(run / "eval.config.txt", echo.str());

  const ExperimentReport report = evaluate(corpus, models, o.eval, stft_cfg);
  std::ostringstream csv;
  bool first = true;
  for (EvalCondition c : o.eval.conditions)
    for (Method m : o.eval.methods) {
      std::ostringstream part;
      write_eval_csv(part, report.rows, c, m);
      std::string text = part.str();
      if (!first) text = text.substr(text.find('\n') + 1);
      first = false;
      csv << text;
    }
  write_text(run / "eval.csv", csv.str());
  write_text(run / "report.json", to_json(report).dump(1) + "\n");
  const std::string rendered = render_report(report);
  write_text(run / "report.txt", rendered);
  std::cout << rendered;
}

// ---- report ----

struct ReportOpts {
  std::string report;
  std::vector<std::string> pgm_wavs;
  std::string pgm_dir;
  StftOpts stft;
};

void run_report(const ReportOpts& o) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(o.report));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed report " + o.report + ": " + e.what());
  }
  std::cout << render_report(report_from_json(j));

  if (!o.pgm_wavs.empty()) {
    const std::string dir = o.pgm_dir.empty() ? "." : o.pgm_dir;
    ensure_dir(dir);
    for (const auto& wav : o.pgm_wavs) {
      const AudioClip clip = read_wav(wav);
      const StftConfig cfg = o.stft.make(clip.sample_rate);
      const fs::path out = fs::path(dir) / (fs::path(wav).stem().string() + ".pgm");
      write_pgm(out.string(), log_magnitude(stft(clip, cfg)));
      std::cout << "wrote " << out.string() << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual separation of visible and invisible sounds", "avsa"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string unused_config;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", unused_config, "flat key=value file of option defaults");
  };

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen_cmd->add_option("--out", gen.out, "corpus directory")->required();
  gen_cmd->add_option("--classes", gen.params.classes, "number of source classes");
  gen_cmd->add_option("--clips-per-class", gen.params.clips_per_class, "clips per class");
  gen_cmd->add_option("--channels", gen.params.channels, "visual feature length k_r");
  gen_cmd->add_option("--frames-per-clip", gen.params.frames_per_clip, "visual frames per clip");
  gen_cmd->add_option("--seed", gen.params.seed, "corpus seed");
  gen_cmd->add_option("--duration", gen.params.duration_s, "clip duration in seconds");
  gen_cmd->add_option("--sample-rate", gen.params.sample_rate, "sample rate in Hz");
  gen_cmd->add_option("--test-fraction", gen.params.test_fraction, "fraction of each class held out");
  gen_cmd->add_option("--feature-noise", gen.params.feature_noise, "feature noise sigma / prototype norm");
  add_config(gen_cmd);

  TrainOpts sep_opts;
  auto* sep_cmd = app.add_subcommand("train-sep", "train the separator");
  sep_opts.add_to(sep_cmd, true);
  add_config(sep_cmd);

  TrainOpts parser_opts;
  auto* parser_cmd = app.add_subcommand("train-parser", "train the scene parser");
  parser_opts.add_to(parser_cmd, false);
  add_config(parser_cmd);

  InferOpts inf;
  auto* inf_cmd = app.add_subcommand("infer", "parse and separate one mixture");
  inf_cmd->add_option("--mixture", inf.mixture, "mixture WAV");
  inf_cmd->add_option("--visual", inf.visual, "JSON array of visual feature vectors");
  inf_cmd->add_option("--data", inf.data, "draw the mixture from this corpus's test split instead");
  inf_cmd->add_option("--mixture-seed", inf.mixture_seed, "seed of the drawn mixture");
  inf_cmd->add_option("--sources", inf.sources, "sources in the drawn mixture");
  inf_cmd->add_option("--visible", inf.visible, "visible sources in the drawn mixture");
  inf_cmd->add_option("--parser", inf.parser, "parser checkpoint")->required();
  inf_cmd->add_option("--separator", inf.separator, "separator checkpoint")->required();
  inf_cmd->add_option("--out", inf.out, "output directory")->required();
  inf_cmd->add_option("--tau", inf.tau, "scene threshold");
  inf.stft.add_to(inf_cmd);
  add_config(inf_cmd);

  EvalOpts ev;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate methods on drawn mixtures");
  ev_cmd->add_option("--data", ev.data, "corpus directory")->required();
  ev_cmd->add_option("--run", ev.run, "run directory (checkpoints default to files found here)")->required();
  ev_cmd->add_option("--joint", ev.joint, "joint separator checkpoint");
  ev_cmd->add_option("--visual-only", ev.visual_only, "visual-only separator checkpoint");
  ev_cmd->add_option("--semantic-only", ev.semantic_only, "semantic-only separator checkpoint");
  ev_cmd->add_option("--parser", ev.parser, "parser checkpoint");
  ev_cmd->add_option("--methods", ev.methods, "avsa, visual-only, semantic-only, subtract-baseline")
      ->delimiter(',');
  ev_cmd->add_option("--conditions", ev.conditions, "test, train, test-prototype")->delimiter(',');
  ev_cmd->add_option("--mixtures", ev.eval.mixtures, "mixtures per condition");
  ev_cmd->add_option("--sources", ev.eval.sources, "sources per mixture");
  ev_cmd->add_option("--visible", ev.eval.visible, "visible sources per mixture");
  ev_cmd->add_option("--seed", ev.eval.seed, "evaluation seed");
  ev_cmd->add_option("--mask-threshold", ev.eval.mask_threshold, "binary mask threshold");
  ev_cmd->add_option("--tau", ev.eval.tau, "scene threshold");
  ev_cmd->add_option("--filter-len", ev.eval.bss.filter_len, "BSS-Eval distortion filter length");
  ev.stft.add_to(ev_cmd);
  add_config(ev_cmd);

  ReportOpts rep;
  auto* rep_cmd = app.add_subcommand("report", "render a report and optional spectrogram images");
  rep_cmd->add_option("--report", rep.report, "report.json written by eval")->required();
  rep_cmd->add_option("--pgm", rep.pgm_wavs, "WAV files to render as PGM spectrograms");
  rep_cmd->add_option("--pgm-dir", rep.pgm_dir, "directory for PGM files");
  rep.stft.add_to(rep_cmd);
  add_config(rep_cmd);

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    args.pop_back();  // program name
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code(ErrorKind::kConfig);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  }

  try {
    if (*gen_cmd) run_gen_data(gen);
    if (*sep_cmd) run_train_sep(sep_opts);
    if (*parser_cmd) run_train_parser(parser_opts);
    if (*inf_cmd) run_infer(inf);
    if (*ev_cmd) run_eval(ev);
    if (*rep_cmd) run_report(rep);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
