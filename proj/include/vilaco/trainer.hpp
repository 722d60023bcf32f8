#pragma once

// Weakly supervised training loop: AdamW over the trainable groups, CPC
// warm-up schedule, feature caching and checkpoints.

#include "vilaco/checkpoint.hpp"
#include "vilaco/data.hpp"
#include "vilaco/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <unordered_map>

namespace vilaco {

struct TrainConfig {
  double lr = 1e-4;
  int batch = 32;
  int epochs = 100;  // T_total
  int warmup = 10;   // T_w
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool augment = true;
  bool shuffle = true;
  LossSwitches losses;
};

// Throws ConfigError unless 0 <= warmup < epochs, lr > 0, batch > 0.
void validate(const TrainConfig& cfg);

// 0 for t < T_w, else 1 - exp(-(t - T_w) / (T_total - T_w)). Throws InputError for t < 0.
double lambda_ccs(int t, int warmup, int total);

// Decoupled weight decay Adam with the usual bias correction. Moments are
// keyed by parameter name; a parameter without a gradient is skipped.
class AdamW {
 public:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  void step(ParamStore& store, const TrainConfig& cfg);

  std::int64_t steps() const { return steps_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::int64_t steps, std::map<std::string, Moments> moments);

 private:
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

struct TrainState {
  explicit TrainState(const ModelConfig& cfg, std::uint64_t seed);

  Model model;
  AdamW optimizer;
  int epoch = 0;  // completed epochs
  std::mt19937_64 rng;
};

// Frozen-encoder outputs per sample id, valid while augmentation is off.
class FeatureCache {
 public:
  const PatchFeatures& get(const Model& model, const TrainSample& sample);
  std::size_t size() const { return cache_.size(); }

 private:
  std::unordered_map<std::string, PatchFeatures> cache_;
};

struct EpochLog {
  int epoch = 0;  // t, the 0-based index of the finished epoch
  double lambda = 0.0;
  double coarse = 0.0;  // per-image means
  double fine = 0.0;
  double cpc = 0.0;
  double total = 0.0;
  int cpc_valid = 0;  // fake images with a usable pseudo-label split
};

// One pass over the loader. Reads only images and image-level labels.
// Throws NumericalError on a non-finite loss.
EpochLog train_epoch(TrainState& state, const TrainLoader& loader, const TrainConfig& cfg,
                     FeatureCache* cache = nullptr);

// Fixed-width log line: epoch, L_coarse, L_fine, L_cpc, lambda.
std::string format_epoch_log(const EpochLog& log);
inline constexpr const char* kEpochLogHeader = "epoch\tL_coarse\tL_fine\tL_cpc\tlambda\tL_total";

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg);
// Restores into an existing state. Everything is validated before any
// tensor is written; a mismatch throws ShapeError/CheckpointError.
void restore_checkpoint(const BlobFile& file, TrainState& state);
ModelConfig checkpoint_model_config(const BlobFile& file);
TrainConfig checkpoint_train_config(const BlobFile& file);
// Builds the model recorded in the checkpoint and restores it.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace vilaco
