#include "test_util.hpp"

#include "vilaco/data.hpp"
#include "vilaco/errors.hpp"

#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <type_traits>

using namespace vilaco;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Detects a `mask` member at compile time.
template <typename T, typename = void>
struct has_mask : std::false_type {};
template <typename T>
struct has_mask<T, std::void_t<decltype(std::declval<T>().mask)>> : std::true_type {};

static_assert(!has_mask<TrainSample>::value, "training samples must not carry masks");
static_assert(has_mask<EvalSample>::value);

class DataTest : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("vilaco_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
};

TEST_F(DataTest, CorpusCountsAndMasks) {
  GenSpec spec;
  spec.count = 10;
  spec.seed = 1;
  const auto manifest = generate_corpus(spec, dir / "a");
  const auto recs = read_manifest(manifest);
  ASSERT_EQ(recs.size(), 10u);
  int fakes = 0;
  for (const auto& r : recs) {
    EXPECT_TRUE(fs::exists(dir / "a" / r.path));
    if (r.label == 1) {
      ++fakes;
      ASSERT_FALSE(r.mask_path.empty());
      const auto m = load_mask(dir / "a" / r.mask_path);
      const double area = static_cast<double>(m.positives()) / (256.0 * 256.0);
      EXPECT_GE(area, 0.05);
      EXPECT_LE(area, 0.3);
    } else {
      EXPECT_TRUE(r.mask_path.empty());
    }
  }
  EXPECT_EQ(fakes, 5);
  int mask_files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "masks")) mask_files += e.is_regular_file();
  EXPECT_EQ(mask_files, 5);
}

TEST_F(DataTest, FakeCountFollowsRatio) {
  GenSpec spec;
  spec.count = 7;
  spec.fake_ratio = 0.3;
  spec.kinds = {TamperKind::CopyMove};
  int fakes = 0;
  for (const auto& r : read_manifest(generate_corpus(spec, dir))) fakes += r.label;
  EXPECT_EQ(fakes, 2);
}

TEST_F(DataTest, RegenerationIsByteIdentical) {
  GenSpec spec;
  spec.count = 6;
  spec.seed = 9;
  generate_corpus(spec, dir / "a");
  generate_corpus(spec, dir / "b");
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
  }
}

TEST_F(DataTest, EveryTamperKindProducesLabelledFakes) {
  for (auto kind : {TamperKind::Splice, TamperKind::CopyMove, TamperKind::InpaintBlur}) {
    GenSpec spec;
    spec.count = 2;
    spec.fake_ratio = 1.0;
    spec.kinds = {kind};
    const auto root = dir / std::string(tamper_kind_name(kind));
    const auto recs = read_manifest(generate_corpus(spec, root));
    for (const auto& r : recs) EXPECT_EQ(r.label, 1);
    EXPECT_EQ(parse_tamper_kind(tamper_kind_name(kind)), kind);
  }
  EXPECT_THROW(parse_tamper_kind("warp"), ConfigError);
}

TEST_F(DataTest, SpecValidation) {
  GenSpec spec;
  spec.count = 1;
  EXPECT_THROW(validate(spec), ConfigError);
  spec = {};
  spec.area_min = 0.0;
  EXPECT_THROW(validate(spec), ConfigError);
  spec = {};
  spec.area_max = 1.0;
  EXPECT_THROW(validate(spec), ConfigError);
  spec = {};
  spec.kinds.clear();
  EXPECT_THROW(validate(spec), ConfigError);
}

TEST_F(DataTest, EvalSplitAttachesMasksTrainSplitDoesNot) {
  GenSpec spec;
  spec.count = 4;
  generate_corpus(spec, dir);
  const auto eval = load_eval_split(dir);
  const auto train = load_train_split(dir);
  ASSERT_EQ(eval.size(), 4u);
  ASSERT_EQ(train.size(), 4u);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    EXPECT_EQ(eval[i].id, train[i].id);
    EXPECT_EQ(eval[i].label, train[i].label);
    EXPECT_EQ(eval[i].image.data, train[i].image.data);
    EXPECT_EQ(eval[i].mask.data.size(), 256u * 256u);
    if (eval[i].label == 0) {
      EXPECT_EQ(eval[i].mask.positives(), 0u);
    } else {
      EXPECT_GT(eval[i].mask.positives(), 0u);
    }
  }
}

TEST_F(DataTest, MissingFakeMaskIsDatasetError) {
  fs::create_directories(dir);
  cv::imwrite((dir / "x.png").string(), cv::Mat(32, 32, CV_8UC3, cv::Scalar(10, 20, 30)));
  write_manifest(dir / "manifest.tsv", {{"x.png", 1, ""}});
  try {
    load_eval_split(dir);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("x.png"), std::string::npos);
  }
  EXPECT_EQ(load_train_split(dir).size(), 1u);
}

TEST_F(DataTest, MalformedManifestRow) {
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.tsv") << "path\tlabel\tmask_path\nx.png\tmaybe\t\n";
  EXPECT_THROW(read_manifest(dir / "manifest.tsv"), DatasetError);
}

TEST_F(DataTest, CasiaLayoutResizedAndBinarised) {
  fs::create_directories(dir / "Au");
  fs::create_directories(dir / "Tp");
  fs::create_directories(dir / "Gt");
  cv::Mat img(384, 512, CV_8UC3, cv::Scalar(0, 0, 255));  // BGR red
  cv::imwrite((dir / "Au" / "a1.jpg").string(), img);
  cv::imwrite((dir / "Tp" / "t1.png").string(), img);
  cv::Mat gt(384, 512, CV_8UC1, cv::Scalar(0));
  gt(cv::Rect(100, 50, 200, 150)).setTo(200);
  gt.at<unsigned char>(0, 0) = 90;  // below half, must stay background
  cv::imwrite((dir / "Gt" / "t1_gt.png").string(), gt);

  const auto recs = discover_dataset(dir);
  ASSERT_EQ(recs.size(), 2u);
  const auto eval = load_eval_split(dir);
  for (const auto& s : eval) {
    EXPECT_EQ(s.image.height, 256);
    EXPECT_EQ(s.image.width, 256);
    EXPECT_NEAR(s.image.at(0, 10, 10), 1.0f, 0.02f);  // channel 0 is red
    EXPECT_NEAR(s.image.at(2, 10, 10), 0.0f, 0.02f);
    for (auto v : s.mask.data) EXPECT_TRUE(v == 0 || v == 1);
  }
  const auto& fake = eval[0].label == 1 ? eval[0] : eval[1];
  EXPECT_EQ(fake.mask.at(0, 0), 0);
  EXPECT_GT(fake.mask.positives(), 0u);
}

TEST_F(DataTest, MissingImageNamesPath) {
  try {
    load_image(dir / "nope.png");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.png"), std::string::npos);
  }
  EXPECT_THROW(discover_dataset(dir / "missing"), IoError);
}

TEST(Augment, FlipIsInvolution) {
  std::mt19937_64 rng(81);
  const auto img = vilaco::testing::random_image(rng);
  EXPECT_EQ(hflip(hflip(img)).data, img.data);
  AugmentDecision d;
  d.flip = true;
  EXPECT_EQ(apply_augment(apply_augment(img, d), d).data, img.data);
  EXPECT_EQ(apply_augment(img, AugmentDecision{}).data, img.data);
}

TEST(Augment, LabelKeptAndShapeFixed) {
  std::mt19937_64 rng(82);
  TrainSample s{"x", vilaco::testing::random_image(rng), 1};
  for (int i = 0; i < 20; ++i) {
    const auto d = draw_augment(rng);
    EXPECT_GE(d.scale, 0.8);
    EXPECT_LE(d.scale, 1.0);
    EXPECT_LE(d.crop_x + d.crop_side, 256);
    EXPECT_LE(d.crop_y + d.crop_side, 256);
    const auto a = augment(s, rng);
    EXPECT_EQ(a.label, 1);
    EXPECT_EQ(a.id, "x");
    EXPECT_EQ(a.image.height, 256);
    EXPECT_EQ(a.image.width, 256);
    EXPECT_EQ(a.image.data.size(), 3u * 256 * 256);
  }
}

TEST(Loader, BatchesCoverEverySampleOnce) {
  std::vector<TrainSample> samples(10);
  for (int i = 0; i < 10; ++i) samples[static_cast<std::size_t>(i)].id = std::to_string(i);
  std::mt19937_64 rng(83);
  for (bool shuffle : {false, true}) {
    TrainLoader loader(samples, 4, shuffle);
    const auto batches = loader.epoch_batches(rng);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches.back().size(), 2u);
    std::vector<int> seen(10, 0);
    for (const auto& b : batches) {
      for (const auto* s : b) ++seen[static_cast<std::size_t>(std::stoi(s->id))];
    }
    for (int v : seen) EXPECT_EQ(v, 1);
    if (!shuffle) EXPECT_EQ(batches[0][0]->id, "0");
  }
  EXPECT_THROW(TrainLoader(samples, 0, false), ConfigError);
}

}  // namespace
