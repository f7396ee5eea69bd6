#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

namespace fs = std::filesystem;

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "avsa_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Runs the CLI with stdout and stderr captured into `log`; returns the exit code.
int run(const std::string& args, const std::string& log = "last.log") {
  const std::string cmd = std::string("\"") + AVSA_CLI_PATH + "\" " + args + " > \"" +
                          (work_dir() / log).string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const std::string kStft = " --fft-size 64 --hop 16";
const std::string kTrain = " --iterations 4 --batch 2 --crop-frames 8" + kStft;

std::string corpus_dir() { return (work_dir() / "data").string(); }

void ensure_corpus() {
  static const int code = run("gen-data --out " + corpus_dir() +
                              " --classes 4 --clips-per-class 5 --channels 8 --duration 0.4 --sample-rate 4000 --seed 3");
  ASSERT_EQ(code, 0) << slurp(work_dir() / "last.log");
}

void train_all(const std::string& run_dir) {
  for (const char* mode : {"joint", "visual-only", "semantic-only"})
    ASSERT_EQ(run("train-sep --data " + corpus_dir() + " --run " + run_dir + " --mode " + mode + kTrain), 0)
        << slurp(work_dir() / "last.log");
  ASSERT_EQ(run("train-parser --data " + corpus_dir() + " --run " + run_dir + kTrain), 0)
      << slurp(work_dir() / "last.log");
}

std::string eval_args(const std::string& run_dir) {
  return "eval --data " + corpus_dir() + " --run " + run_dir +
         " --mixtures 2 --filter-len 32 --conditions test,test-prototype" + kStft;
}

TEST(Cli, EndToEndRun) {
  ensure_corpus();
  const fs::path r = work_dir() / "run_a";
  train_all(r.string());
  for (const char* f : {"sep-joint.ckpt", "sep-visual-only.ckpt", "sep-semantic-only.ckpt", "parser.ckpt",
                        "sep-joint.history.csv", "parser.history.csv", "sep-joint.config.txt"})
    EXPECT_TRUE(fs::exists(r / f)) << f;
  EXPECT_NE(slurp(r / "sep-joint.config.txt").find("seed=1\n"), std::string::npos);

  ASSERT_EQ(run(eval_args(r.string())), 0) << slurp(work_dir() / "last.log");
  const std::string csv = slurp(r / "eval.csv");
  EXPECT_EQ(csv.rfind("mixture_id,", 0), 0u);
  EXPECT_EQ(csv.find("mixture_id,", 1), std::string::npos);
  const std::string txt = slurp(r / "report.txt");
  EXPECT_NE(txt.find("method | visibility | SDR | SIR | n"), std::string::npos);
  EXPECT_NE(txt.find("subtract-baseline"), std::string::npos);

  ASSERT_EQ(run("report --report " + (r / "report.json").string(), "report.log"), 0);
  EXPECT_EQ(slurp(work_dir() / "report.log"), txt);

  ASSERT_EQ(run("infer --data " + corpus_dir() + " --mixture-seed 2 --parser " + (r / "parser.ckpt").string() +
                " --separator " + (r / "sep-joint.ckpt").string() + " --out " + (work_dir() / "inf").string() +
                kStft),
            0)
      << slurp(work_dir() / "last.log");
  EXPECT_TRUE(fs::exists(work_dir() / "inf" / "mixture.wav"));
  ASSERT_EQ(run("report --report " + (r / "report.json").string() + " --pgm " +
                (work_dir() / "inf" / "mixture.wav").string() + " --pgm-dir " + (work_dir() / "pgm").string() + kStft),
            0);
  EXPECT_TRUE(fs::exists(work_dir() / "pgm" / "mixture.pgm"));
}

TEST(Cli, SameSeedGivesByteIdenticalArtifacts) {
  ensure_corpus();
  const fs::path a = work_dir() / "det_a", b = work_dir() / "det_b";
  train_all(a.string());
  train_all(b.string());
  ASSERT_EQ(run(eval_args(a.string())), 0);
  ASSERT_EQ(run(eval_args(b.string())), 0);
  for (const char* f : {"sep-joint.ckpt", "sep-semantic-only.ckpt", "parser.ckpt", "sep-joint.history.csv",
                        "eval.csv", "report.json", "report.txt"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Cli, ExitCodes) {
  ensure_corpus();
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("train-sep --data " + corpus_dir()), 2);  // missing --run
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train-sep --data " + corpus_dir() + " --run " + (work_dir() / "bad").string() + " --mode fancy"), 2);
  EXPECT_EQ(run("train-sep --data " + corpus_dir() + " --run " + (work_dir() / "bad").string() + " --lambda 3"), 2);
  EXPECT_EQ(run("train-sep --data " + (work_dir() / "nowhere").string() + " --run " + (work_dir() / "bad").string()), 3);
  // Five sources need five classes; the corpus has four.
  EXPECT_EQ(run("train-sep --data " + corpus_dir() + " --run " + (work_dir() / "bad").string() + " --sources 5" +
                " --visible 1" + kTrain),
            3);
  EXPECT_EQ(run("eval --data " + corpus_dir() + " --run " + (work_dir() / "empty_run").string() + kStft), 3);
  // A learning rate this large overflows within a few steps.
  EXPECT_EQ(run("train-sep --data " + corpus_dir() + " --run " + (work_dir() / "bad").string() +
                " --lr 1e308 --iterations 20 --batch 2 --crop-frames 8" + kStft),
            4)
      << slurp(work_dir() / "last.log");
}

TEST(Cli, ConfigFileSuppliesDefaultsAndFlagsOverride) {
  ensure_corpus();
  const fs::path cfg = work_dir() / "train.cfg";
  {
    std::ofstream os(cfg);
    os << "# tiny run\niterations = 3\nbatch=2\ncrop_frames=8\nfft-size=64\nhop=16\nseed=5\n";
  }
  const fs::path r = work_dir() / "cfg_run";
  ASSERT_EQ(run("train-sep --config " + cfg.string() + " --data " + corpus_dir() + " --run " + r.string() +
                " --seed 6"),
            0)
      << slurp(work_dir() / "last.log");
  const std::string echo = slurp(r / "sep-joint.config.txt");
  EXPECT_NE(echo.find("iterations=3\n"), std::string::npos);
  EXPECT_NE(echo.find("seed=6\n"), std::string::npos);
  EXPECT_NE(echo.find("fft-size=64\n"), std::string::npos);

  // The echoed config reproduces the run.
  const fs::path r2 = work_dir() / "cfg_run2";
  ASSERT_EQ(run("train-sep --config " + (r / "sep-joint.config.txt").string() + " --run " + r2.string()), 0)
      << slurp(work_dir() / "last.log");
  EXPECT_EQ(slurp(r / "sep-joint.ckpt"), slurp(r2 / "sep-joint.ckpt"));

  {
    std::ofstream os(work_dir() / "broken.cfg");
    os << "iterations\n";
  }
  EXPECT_EQ(run("train-sep --config " + (work_dir() / "broken.cfg").string() + " --data " + corpus_dir() +
                " --run " + r.string()),
            2);
}

}  // namespace
