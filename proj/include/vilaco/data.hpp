#pragma once

// Synthetic forgery corpus, dataset loaders and training augmentation.
//
// Training and evaluation samples are distinct types: TrainSample carries no
// mask member at all, so nothing on the training path can read ground truth.

#include "vilaco/types.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace vilaco {

enum class TamperKind { Splice, CopyMove, InpaintBlur };

TamperKind parse_tamper_kind(std::string_view name);
std::string_view tamper_kind_name(TamperKind k);

struct GenSpec {
  int count = 100;
  double fake_ratio = 0.5;
  std::vector<TamperKind> kinds{TamperKind::Splice, TamperKind::CopyMove, TamperKind::InpaintBlur};
  double area_min = 0.05;
  double area_max = 0.3;
  std::uint64_t seed = 0;
};

void validate(const GenSpec& spec);

struct ManifestRecord {
  std::string path;       // relative to the dataset root
  int label = 0;
  std::string mask_path;  // empty for authentic images
};

inline constexpr std::string_view kManifestName = "manifest.tsv";

// Writes images/, masks/ and manifest.tsv under out_dir; returns the manifest path.
std::filesystem::path generate_corpus(const GenSpec& spec, const std::filesystem::path& out_dir);

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestRecord>& records);

// Binary {0,1} mask.
struct BinaryMask {
  int height = kImageSize;
  int width = kImageSize;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t positives() const;
};

struct TrainSample {
  std::string id;
  ImageTensor image;
  int label = 0;
};

struct EvalSample {
  std::string id;
  ImageTensor image;
  int label = 0;
  BinaryMask mask;
};

// Dataset root holds manifest.tsv, or a CASIA-style layout: Au/ (authentic),
// Tp/ (tampered) and Gt/ (masks named <stem>_gt.png or <stem>.png).
std::vector<ManifestRecord> discover_dataset(const std::filesystem::path& root);

std::vector<TrainSample> load_train_split(const std::filesystem::path& root);
std::vector<EvalSample> load_eval_split(const std::filesystem::path& root);

// Any decodable image file, resized to 256x256.
ImageTensor load_image(const std::filesystem::path& path);
// Nearest-neighbour resize to 256x256, then re-binarised at 0.5.
BinaryMask load_mask(const std::filesystem::path& path);

struct AugmentDecision {
  bool flip = false;
  double scale = 1.0;  // crop area fraction
  int crop_x = 0;
  int crop_y = 0;
  int crop_side = kImageSize;
};

AugmentDecision draw_augment(std::mt19937_64& rng);
ImageTensor apply_augment(const ImageTensor& img, const AugmentDecision& d);
ImageTensor hflip(const ImageTensor& img);
// Random horizontal flip (p = 0.5) and square random resized crop (area
// scale in [0.8, 1]) back to 256x256. The label is untouched.
TrainSample augment(const TrainSample& sample, std::mt19937_64& rng);

// Fixed-size batches over a training set; the last batch may be short.
class TrainLoader {
 public:
  TrainLoader(const std::vector<TrainSample>& samples, int batch_size, bool shuffle);

  std::vector<std::vector<const TrainSample*>> epoch_batches(std::mt19937_64& rng) const;
  std::size_t size() const { return samples_.size(); }

 private:
  const std::vector<TrainSample>& samples_;
  int batch_size_;
  bool shuffle_;
};

}  // namespace vilaco
