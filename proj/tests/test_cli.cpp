#include "test_util.hpp"

#include "vilaco/cli.hpp"
#include "vilaco/config.hpp"
#include "vilaco/errors.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vilaco;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Small model so CLI training runs in well under a second per epoch.
const std::vector<std::string> kToy{"--set", "encoder.patch_size=64", "--set", "encoder.dim=8",
                                    "--set", "encoder.heads=2",       "--set", "adapter.window=2",
                                    "--set", "adapter.heads=2",       "--set", "reasoning.heads=2",
                                    "--set", "prompt.length=4",       "--set", "decoder.channels=2"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST(Config, JsonRoundTrip) {
  RunConfig cfg;
  cfg.train.lr = 0.5;
  cfg.model.adapter.sigma_dist = 0.3;
  cfg.model.encoder.backend = Backend::Pretrained;
  cfg.train.losses.cpc = false;
  const RunConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  EXPECT_EQ(back.train.lr, 0.5);
  EXPECT_FALSE(back.train.losses.cpc);
}

TEST(Config, PartialDocumentKeepsBase) {
  RunConfig base;
  base.train.batch = 7;
  const auto cfg = config_from_json(R"({"train": {"lr": 0.01}})", base);
  EXPECT_EQ(cfg.train.lr, 0.01);
  EXPECT_EQ(cfg.train.batch, 7);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  EXPECT_THROW(config_from_json(R"({"train": {"learning_rate": 0.1}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"bogus": {}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"train": {"batch": "many"}})"), ConfigError);
  EXPECT_THROW(config_from_json("{not json"), ConfigError);
  RunConfig cfg;
  EXPECT_THROW(apply_override(cfg, "train.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "train.lr"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "train.batch=abc"), ConfigError);
  apply_override(cfg, "train.augment=false");
  apply_override(cfg, "encoder.backend=pretrained");
  EXPECT_FALSE(cfg.train.augment);
  EXPECT_EQ(cfg.model.encoder.backend, Backend::Pretrained);
}

TEST(Config, EveryKeyIsOverridable) {
  const auto keys = config_keys();
  EXPECT_GT(keys.size(), 30u);
  const auto doc = nlohmann::json::parse(config_to_json(RunConfig{}));
  for (const auto& k : keys) {
    const auto dot = k.find('.');
    ASSERT_NE(dot, std::string::npos) << k;
    const auto& v = doc.at(k.substr(0, dot)).at(k.substr(dot + 1));
    RunConfig cfg;
    std::string text = v.is_string() ? v.get<std::string>() : v.dump();
    EXPECT_NO_THROW(apply_override(cfg, k + "=" + text)) << k;
  }
}

TEST(Config, MissingFileIsIoError) { EXPECT_THROW(load_config_file("/nonexistent/cfg.json"), IoError); }

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("vilaco_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    unsetenv("VILACO_DETERMINISTIC");
  }
  void TearDown() override {
    fs::remove_all(dir);
    unsetenv("VILACO_DETERMINISTIC");
  }

  fs::path corpus(int count = 6) {
    const auto d = dir / "data";
    if (!fs::exists(d)) {
      EXPECT_EQ(cli({"gen-data", "--count", std::to_string(count), "--seed", "3", "--out", d.string()}).code, 0);
    }
    return d;
  }

  fs::path train(const std::string& name, std::vector<std::string> extra = {}, int epochs = 2) {
    const auto out = dir / name;
    auto args = cat({"train", "--data", corpus().string(), "--out", out.string(), "--epochs", std::to_string(epochs),
                     "--warmup", "1", "--batch", "3", "--no-augment"},
                    kToy);
    const auto r = cli(cat(args, extra));
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }
};

TEST_F(CliTest, GenDataWritesManifest) {
  const auto r = cli({"gen-data", "--count", "10", "--seed", "1", "--out", (dir / "a").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("manifest.tsv"), std::string::npos);
  EXPECT_EQ(read_manifest(dir / "a" / "manifest.tsv").size(), 10u);
  ASSERT_EQ(cli({"gen-data", "--count", "10", "--seed", "1", "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.tsv"), slurp(dir / "b" / "manifest.tsv"));
}

TEST_F(CliTest, GenDataValidation) {
  EXPECT_EQ(cli({"gen-data", "--count", "1", "--out", dir.string()}).code, kExitConfig);
  EXPECT_EQ(cli({"gen-data", "--kinds", "warp", "--out", dir.string()}).code, kExitConfig);
  EXPECT_EQ(cli({"gen-data", "--count", "4"}).code, kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(cli({}).code, kExitConfig);
}

TEST_F(CliTest, TrainHeaderEchoesDefaults) {
  const auto r = cli({"train", "--data", (dir / "missing").string(), "--out", (dir / "run").string()});
  EXPECT_NE(r.out.find("lr=0.0001 batch=32 epochs=100"), std::string::npos) << r.out;
  EXPECT_EQ(r.code, kExitIo);
}

TEST_F(CliTest, OverridePrecedence) {
  const auto file = dir / "cfg.json";
  std::ofstream(file) << R"({"train": {"lr": 0.01, "batch": 5, "epochs": 17}})";
  auto header = [&](std::vector<std::string> extra) {
    auto args = cat({"train", "--data", (dir / "missing").string(), "--out", (dir / "run").string()}, extra);
    const auto out = cli(args).out;
    return out.substr(0, out.find('\n'));
  };
  EXPECT_NE(header({}).find("lr=0.0001 batch=32 epochs=100"), std::string::npos);
  EXPECT_NE(header({"--config", file.string()}).find("lr=0.01 batch=5 epochs=17"), std::string::npos);
  const auto h = header({"--config", file.string(), "--set", "train.batch=6", "--lr", "0.02"});
  EXPECT_NE(h.find("lr=0.02 batch=6 epochs=17"), std::string::npos) << h;
  EXPECT_NE(header({"--set", "train.lr=0.5", "--lr", "0.25"}).find("lr=0.25"), std::string::npos);
  EXPECT_EQ(cli({"train", "--data", "x", "--out", "y", "--set", "train.bogus=1"}).code, kExitConfig);
  EXPECT_EQ(cli({"train", "--data", "x", "--out", "y", "--config", (dir / "nope.json").string()}).code, kExitIo);
}

TEST_F(CliTest, DeterministicFromEnvironment) {
  EXPECT_FALSE(deterministic_from_env());
  setenv("VILACO_DETERMINISTIC", "1", 1);
  EXPECT_TRUE(deterministic_from_env());
  const auto r = cli({"train", "--data", (dir / "missing").string(), "--out", (dir / "run").string()});
  EXPECT_NE(r.out.find("shuffle=0"), std::string::npos);
}

TEST_F(CliTest, TrainWritesLogAndCheckpoints) {
  const auto run = train("run", {"--checkpoint-every", "1"});
  EXPECT_TRUE(fs::exists(run / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(run / "checkpoint_epoch_0001.bin"));
  EXPECT_TRUE(fs::exists(run / "config.json"));
  std::ifstream log(run / "train_log.tsv");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, kEpochLogHeader);
  int rows = 0;
  while (std::getline(log, line)) {
    std::istringstream fields(line);
    std::string epoch, c, f, p, lambda;
    fields >> epoch >> c >> f >> p >> lambda;
    if (std::stoi(epoch) < 1) EXPECT_EQ(std::stod(lambda), 0.0);
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST_F(CliTest, SeededRunsAreByteIdenticalAndResumeAppends) {
  setenv("VILACO_DETERMINISTIC", "1", 1);
  const auto a = train("a");
  const auto b = train("b");
  EXPECT_EQ(slurp(a / "train_log.tsv"), slurp(b / "train_log.tsv"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));

  const auto c = train("c", {"--checkpoint-every", "1"}, 3);
  const auto r = cli(cat({"train", "--data", corpus().string(), "--out", (dir / "c").string(), "--epochs", "3",
                          "--warmup", "1", "--batch", "3", "--no-augment", "--resume",
                          (c / "checkpoint_epoch_0002.bin").string()},
                         kToy));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto full = train("d", {}, 3);
  const std::string resumed = slurp(c / "train_log.tsv");
  const std::string reference = slurp(full / "train_log.tsv");
  EXPECT_EQ(resumed.substr(resumed.rfind('\n', resumed.size() - 2)),
            reference.substr(reference.rfind('\n', reference.size() - 2)));
}

TEST_F(CliTest, EvalPredictReport) {
  const auto run = train("run");
  const auto ckpt = (run / "checkpoint.bin").string();
  const auto r1 = cli({"eval", "--checkpoint", ckpt, "--data", corpus().string(), "--out", (dir / "e1").string()});
  ASSERT_EQ(r1.code, 0) << r1.err;
  const auto r2 = cli({"eval", "--checkpoint", ckpt, "--data", corpus().string(), "--out", (dir / "e2").string()});
  EXPECT_EQ(slurp(dir / "e1" / "report.json"), slurp(dir / "e2" / "report.json"));
  EXPECT_NE(r1.out.find("C-F1"), std::string::npos);
  const auto rep = nlohmann::json::parse(slurp(dir / "e1" / "report.json"));
  for (const char* k : {"p_f1", "i_f1", "c_f1"}) {
    ASSERT_TRUE(rep.contains(k));
    EXPECT_GE(rep[k].get<double>(), 0.0);
    EXPECT_LE(rep[k].get<double>(), 1.0);
  }
  EXPECT_TRUE(fs::exists(dir / "e1" / "report.txt"));

  const auto img = corpus() / read_manifest(corpus() / "manifest.tsv")[0].path;
  const auto mask_path = dir / "m.png";
  const auto p = cli({"predict", "--checkpoint", ckpt, "--image", img.string(), "--out", mask_path.string()});
  ASSERT_EQ(p.code, 0) << p.err;
  double yc = -1, yf = -1;
  ASSERT_EQ(std::sscanf(p.out.c_str(), "y_coarse=%lf y_fine=%lf", &yc, &yf), 2) << p.out;
  EXPECT_GE(yc, 0.0);
  EXPECT_LE(yc, 1.0);
  EXPECT_GE(yf, 0.0);
  EXPECT_LE(yf, 1.0);
  const cv::Mat m = cv::imread(mask_path.string(), cv::IMREAD_UNCHANGED);
  EXPECT_EQ(m.type(), CV_8UC1);
  EXPECT_EQ(m.rows, 256);
  EXPECT_EQ(m.cols, 256);

  const auto t = cli({"report", (dir / "e1" / "report.json").string()});
  EXPECT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("P-F1"), std::string::npos);
}

TEST_F(CliTest, PredictDefaultMaskName) {
  const auto run = train("run");
  const auto img = corpus() / read_manifest(corpus() / "manifest.tsv")[1].path;
  const auto copy = dir / "probe.png";
  fs::copy_file(img, copy);
  ASSERT_EQ(cli({"predict", "--checkpoint", (run / "checkpoint.bin").string(), "--image", copy.string()}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "probe_mask.png"));
}

TEST_F(CliTest, MissingInputsAreIoErrors) {
  const auto run = train("run");
  const auto missing = (dir / "ghost.png").string();
  const auto r = cli({"predict", "--checkpoint", (run / "checkpoint.bin").string(), "--image", missing});
  EXPECT_EQ(r.code, kExitIo);
  EXPECT_NE(r.err.find(missing), std::string::npos);
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "none.bin").string(), "--data", corpus().string()}).code, kExitIo);
}

}  // namespace
