// End-to-end checks of the catsr binary: subcommand contracts, file outputs,
// seeded determinism, and exit codes. Everything runs on tiny corpora.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const std::string kTinySet =
    " --set corpus.train_speakers=6 corpus.dev_speakers=2 corpus.test_speakers=2"
    " corpus.utts_per_speaker_per_channel=2 corpus.frames=8 corpus.feat_dim=4"
    " model.conv_widths=2,2 model.embed_dim=4 model.pool_stages=1 model.d2_hidden=4"
    " train.batch_speakers=2 train.batch_utts=2 train.epochs=1 train.eval_interval=1 train.eval_window=8"
    " eval.topn=1,2";

std::string bin() { return CATSR_BIN; }

int run(const std::string& args, const std::string& log = "/dev/null") {
  const std::string cmd = bin() + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

void push_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void push_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void write_wav(const std::string& path, int samples, int rate = 16000) {
  std::vector<uint8_t> b;
  const char* riff = "RIFF";
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(riff[i]));
  push_u32(b, 36 + static_cast<uint32_t>(samples * 2));
  const char* rest = "WAVEfmt ";
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(rest[i]));
  push_u32(b, 16);
  push_u16(b, 1);
  push_u16(b, 1);
  push_u32(b, static_cast<uint32_t>(rate));
  push_u32(b, static_cast<uint32_t>(rate * 2));
  push_u16(b, 2);
  push_u16(b, 16);
  const char* data = "data";
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(data[i]));
  push_u32(b, static_cast<uint32_t>(samples * 2));
  for (int i = 0; i < samples; ++i) push_u16(b, static_cast<uint16_t>((i * 37) % 8192));
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("synth writes manifests that parse and is byte-deterministic per seed") {
  TempDir tmp("catsr_cli_synth");
  REQUIRE(run("synth --out " + (tmp / "c1") + kTinySet) == 0);
  for (const char* m : {"train.tsv", "dev.tsv", "test.tsv"}) {
    const std::string manifest = slurp(tmp / ("c1/" + std::string(m)));
    CHECK(!manifest.empty());
    std::istringstream is(manifest);
    std::string line;
    while (std::getline(is, line)) {
      CHECK(std::count(line.begin(), line.end(), '\t') == 3);
    }
  }
  REQUIRE(run("synth --out " + (tmp / "c2") + kTinySet) == 0);
  CHECK(slurp(tmp / "c1/train.tsv") == slurp(tmp / "c2/train.tsv"));
  CHECK(slurp(tmp / "c1/features/s0_c0_u0.catf") == slurp(tmp / "c2/features/s0_c0_u0.catf"));

  SUBCASE("different seed changes the corpus") {
    REQUIRE(run("synth --out " + (tmp / "c3") + kTinySet + " corpus.seed=999") == 0);
    CHECK(slurp(tmp / "c1/features/s0_c0_u0.catf") != slurp(tmp / "c3/features/s0_c0_u0.catf"));
  }
  SUBCASE("CAT_SEED env var overrides the config seed") {
    const std::string cmd = "CAT_SEED=999 " + bin() + " synth --out " + (tmp / "c4") + kTinySet +
                            " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    REQUIRE(run("synth --out " + (tmp / "c5") + kTinySet + " corpus.seed=999") == 0);
    CHECK(slurp(tmp / "c4/features/s0_c0_u0.catf") == slurp(tmp / "c5/features/s0_c0_u0.catf"));
  }
}

TEST_CASE("unknown config keys are rejected naming the key") {
  TempDir tmp("catsr_cli_badkey");
  const std::string log = tmp / "log.txt";
  CHECK(run("synth --out " + (tmp / "c") + " --set corpus.bogus_knob=1", log) == 2);
  CHECK(slurp(log).find("bogus_knob") != std::string::npos);
}

TEST_CASE("fbank converts wav files and reports per-file failures") {
  TempDir tmp("catsr_cli_fbank");
  fs::create_directories(tmp / "wavs");
  write_wav(tmp / "wavs/a.wav", 16000);
  write_wav(tmp / "wavs/b.wav", 8000);

  SUBCASE("clean directory converts everything") {
    REQUIRE(run("fbank --in " + (tmp / "wavs") + " --out " + (tmp / "feats") +
                " --set fbank.mel_bins=8") == 0);
    CHECK(fs::exists(tmp / "feats/a.catf"));
    CHECK(fs::exists(tmp / "feats/b.catf"));
    // 1 s at 16 kHz with 25/10 ms framing -> 98 frames in the header
    const std::string feat = slurp(tmp / "feats/a.catf");
    CHECK(static_cast<uint8_t>(feat[8]) == 98);
  }
  SUBCASE("a corrupt wav fails that file and the exit code") {
    std::ofstream bad(tmp / "wavs/broken.wav", std::ios::binary);
    bad << "not a riff";
    bad.close();
    const std::string log = tmp / "log.txt";
    CHECK(run("fbank --in " + (tmp / "wavs") + " --out " + (tmp / "feats2") +
                  " --set fbank.mel_bins=8",
              log) == 1);
    CHECK(slurp(log).find("broken.wav") != std::string::npos);
    CHECK(fs::exists(tmp / "feats2/a.catf"));  // others still converted
  }
  SUBCASE("an empty directory warns and exits zero") {
    fs::create_directories(tmp / "empty");
    const std::string log = tmp / "log.txt";
    CHECK(run("fbank --in " + (tmp / "empty") + " --out " + (tmp / "feats3"), log) == 0);
    CHECK(slurp(log).find("no .wav inputs") != std::string::npos);
  }
}

TEST_CASE("train / eval / sweep-beta round trip on a tiny corpus") {
  TempDir tmp("catsr_cli_train");
  REQUIRE(run("synth --out " + (tmp / "corpus") + kTinySet) == 0);

  SUBCASE("train writes checkpoint, log and summary; identical seeds give identical logs") {
    REQUIRE(run("train --arch cnn --corpus " + (tmp / "corpus") + " --out " + (tmp / "r1") +
                kTinySet) == 0);
    CHECK(fs::exists(tmp / "r1/checkpoint.catc"));
    CHECK(fs::exists(tmp / "r1/summary.json"));
    const std::string log1 = slurp(tmp / "r1/trainlog.csv");
    CHECK(log1.rfind("step,L_s,L_T,L_ch,total,lr\n", 0) == 0);

    REQUIRE(run("train --arch cnn --corpus " + (tmp / "corpus") + " --out " + (tmp / "r2") +
                kTinySet) == 0);
    CHECK(slurp(tmp / "r2/trainlog.csv") == log1);
  }
  SUBCASE("epochs=0 leaves the checkpoint at initialization") {
    REQUIRE(run("train --arch cat --corpus " + (tmp / "corpus") + " --out " + (tmp / "z1") +
                kTinySet + " train.epochs=0") == 0);
    REQUIRE(run("train --arch cat --corpus " + (tmp / "corpus") + " --out " + (tmp / "z2") +
                kTinySet + " train.epochs=0") == 0);
    CHECK(slurp(tmp / "z1/checkpoint.catc") == slurp(tmp / "z2/checkpoint.catc"));
    REQUIRE(run("train --arch cat --corpus " + (tmp / "corpus") + " --out " + (tmp / "z3") +
                kTinySet) == 0);
    CHECK(slurp(tmp / "z1/checkpoint.catc") != slurp(tmp / "z3/checkpoint.catc"));
  }
  SUBCASE("eval emits metrics and scores deterministically") {
    REQUIRE(run("train --arch cnn --corpus " + (tmp / "corpus") + " --out " + (tmp / "r") +
                kTinySet) == 0);
    REQUIRE(run("eval --checkpoint " + (tmp / "r/checkpoint.catc") + " --corpus " +
                (tmp / "corpus") + " --out " + (tmp / "e1") + kTinySet) == 0);
    const std::string metrics = slurp(tmp / "e1/metrics.csv");
    CHECK(metrics.rfind("metric,value\n", 0) == 0);
    CHECK(metrics.find("eer,") != std::string::npos);
    CHECK(metrics.find("top1,") != std::string::npos);
    CHECK(metrics.find("top2,") != std::string::npos);
    const std::string scores = slurp(tmp / "e1/scores.csv");
    CHECK(scores.rfind("test_utterance_id,speaker_id,score,is_target\n", 0) == 0);
    // every row carries exactly the documented four columns
    std::istringstream rows(scores);
    std::string row;
    while (std::getline(rows, row)) {
      CHECK(std::count(row.begin(), row.end(), ',') == 3);
    }
    REQUIRE(run("eval --checkpoint " + (tmp / "r/checkpoint.catc") + " --corpus " +
                (tmp / "corpus") + " --out " + (tmp / "e2") + kTinySet) == 0);
    CHECK(slurp(tmp / "e2/metrics.csv") == metrics);
    CHECK(slurp(tmp / "e2/scores.csv") == slurp(tmp / "e1/scores.csv"));
  }
  SUBCASE("checkpoint/corpus feature-dim mismatch is an error") {
    REQUIRE(run("train --arch cnn --corpus " + (tmp / "corpus") + " --out " + (tmp / "r") +
                kTinySet) == 0);
    REQUIRE(run("synth --out " + (tmp / "corpus8") + kTinySet + " corpus.feat_dim=8") == 0);
    const std::string log = tmp / "log.txt";
    CHECK(run("eval --checkpoint " + (tmp / "r/checkpoint.catc") + " --corpus " +
                  (tmp / "corpus8") + " --out " + (tmp / "e") + kTinySet,
              log) == 2);
    CHECK(slurp(log).find("feature dim") != std::string::npos);
  }
  SUBCASE("sweep-beta writes per-cell and median tables") {
    REQUIRE(run("sweep-beta --corpus " + (tmp / "corpus") + " --out " + (tmp / "s") + kTinySet +
                " --betas 0,1 --seeds 4,5") == 0);
    const std::string cells = slurp(tmp / "s/sweep_cells.csv");
    CHECK(cells.rfind("beta,seed,dev_eer,test_top1\n", 0) == 0);
    CHECK(std::count(cells.begin(), cells.end(), '\n') == 5);  // header + 4 cells
    const std::string medians = slurp(tmp / "s/sweep_medians.csv");
    CHECK(medians.rfind("beta,dev_eer,test_top1\n", 0) == 0);
    CHECK(std::count(medians.begin(), medians.end(), '\n') == 3);  // header + 2 rows
  }
}
