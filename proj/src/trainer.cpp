#include "vilaco/trainer.hpp"

#include "vilaco/config.hpp"
#include "vilaco/errors.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace vilaco {

namespace {

constexpr const char* kFormat = "vilaco-checkpoint";

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

int meta_int(const BlobFile& f, const std::string& key) {
  try {
    return std::stoi(f.meta_value(key));
  } catch (const std::logic_error&) {
    throw CheckpointError("checkpoint meta " + key + " is not an integer");
  }
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.batch <= 0) throw ConfigError("batch must be positive");
  if (cfg.epochs <= 0) throw ConfigError("epochs must be positive");
  if (!(cfg.warmup >= 0 && cfg.warmup < cfg.epochs)) throw ConfigError("warmup must satisfy 0 <= T_w < T_total");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(cfg.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (cfg.checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

double lambda_ccs(int t, int warmup, int total) {
  if (t < 0) throw InputError("lambda_ccs: epoch must be non-negative");
  if (!(warmup >= 0 && warmup < total)) throw ConfigError("lambda_ccs: need 0 <= T_w < T_total");
  if (t < warmup) return 0.0;
  return 1.0 - std::exp(-static_cast<double>(t - warmup) / static_cast<double>(total - warmup));
}

void AdamW::step(ParamStore& store, const TrainConfig& cfg) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_));
  const double step_size = cfg.lr / bc1;
  const double bc2_sqrt = std::sqrt(bc2);
  for (const auto* e : store.trainable()) {
    Var var = e->var;
    if (!var.node()->has_grad()) continue;
    const Matrix& g = var.grad();
    auto& mom = moments_[e->name];
    if (mom.m.size() == 0) {
      mom.m = Matrix::Zero(g.rows(), g.cols());
      mom.v = Matrix::Zero(g.rows(), g.cols());
    }
    Matrix& p = var.mutable_value();
    p *= 1.0 - cfg.lr * cfg.weight_decay;
    mom.m = cfg.beta1 * mom.m + (1.0 - cfg.beta1) * g;
    mom.v = cfg.beta2 * mom.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= step_size * mom.m.array() / (mom.v.array().sqrt() / bc2_sqrt + cfg.eps);
  }
}

void AdamW::restore(std::int64_t steps, std::map<std::string, Moments> moments) {
  steps_ = steps;
  moments_ = std::move(moments);
}

TrainState::TrainState(const ModelConfig& cfg, std::uint64_t seed)
    : model(cfg), rng(seed * 0xBF58476D1CE4E5B9ULL + 0x7007) {}

const PatchFeatures& FeatureCache::get(const Model& model, const TrainSample& sample) {
  auto it = cache_.find(sample.id);
  if (it == cache_.end()) it = cache_.emplace(sample.id, model.encode(sample.image)).first;
  return it->second;
}

EpochLog train_epoch(TrainState& state, const TrainLoader& loader, const TrainConfig& cfg, FeatureCache* cache) {
  validate(cfg);
  EpochLog log;
  log.epoch = state.epoch;
  log.lambda = lambda_ccs(state.epoch, cfg.warmup, cfg.epochs);
  const auto batches = loader.epoch_batches(state.rng);
  std::size_t seen = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    state.model.params().zero_grad();
    const Matrix weight = Matrix::Constant(1, 1, 1.0 / static_cast<double>(batch.size()));
    for (const TrainSample* sample : batch) {
      PatchFeatures raw;
      if (cfg.augment) {
        raw = state.model.encode(augment(*sample, state.rng).image);
      } else if (cache) {
        raw = cache->get(state.model, *sample);
      } else {
        raw = state.model.encode(sample->image);
      }
      const auto out = state.model.forward(raw);
      const auto terms = state.model.losses(out, sample->label, log.lambda, cfg.losses, state.rng);
      const double total = terms.total.scalar();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << state.epoch << ", batch " << b << ", sample " << sample->id
            << " (coarse=" << terms.coarse.scalar() << ", fine=" << terms.fine.scalar()
            << ", cpc=" << terms.cpc.scalar() << ", lambda=" << log.lambda << ")";
        throw NumericalError(msg.str());
      }
      if (terms.total.requires_grad()) ag::backward(terms.total, weight);
      log.coarse += terms.coarse.scalar();
      log.fine += terms.fine.scalar();
      log.cpc += terms.cpc.scalar();
      log.total += total;
      log.cpc_valid += terms.cpc_valid ? 1 : 0;
      ++seen;
    }
    for (const auto* e : state.model.params().trainable()) {
      if (e->var.node()->has_grad() && !all_finite(e->var.grad())) {
        throw NumericalError("non-finite gradient for " + e->name + " at epoch " + std::to_string(state.epoch) +
                             ", batch " + std::to_string(b));
      }
    }
    state.optimizer.step(state.model.params(), cfg);
    state.model.sg_params().project();
  }
  if (seen > 0) {
    const double n = static_cast<double>(seen);
    log.coarse /= n;
    log.fine /= n;
    log.cpc /= n;
    log.total /= n;
  }
  state.epoch += 1;
  return log;
}

std::string format_epoch_log(const EpochLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d\t%.8f\t%.8f\t%.8f\t%.8f\t%.8f", log.epoch, log.coarse, log.fine, log.cpc,
                log.lambda, log.total);
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg) {
  BlobFile f;
  f.meta["format"] = kFormat;
  f.meta["d"] = std::to_string(state.model.dim());
  f.meta["patch_size"] = std::to_string(state.model.patch_size());
  f.meta["epoch"] = std::to_string(state.epoch);
  f.meta["adam_steps"] = std::to_string(state.optimizer.steps());
  f.meta["frozen_checksum"] = hex64(state.model.params().frozen_checksum());
  f.meta["config"] = config_to_json(RunConfig{state.model.config(), cfg});
  for (const auto* e : state.model.params().trainable()) f.tensors.emplace_back("param." + e->name, e->var.value());
  for (const auto& [name, mom] : state.optimizer.moments()) {
    f.tensors.emplace_back("adam.m." + name, mom.m);
    f.tensors.emplace_back("adam.v." + name, mom.v);
  }
  std::ostringstream rng;
  rng << state.rng;
  f.bytes.emplace_back("rng", rng.str());
  write_blob_file(path, f);
}

ModelConfig checkpoint_model_config(const BlobFile& file) {
  if (file.meta_value("format") != kFormat) throw CheckpointError("not a model checkpoint");
  return config_from_json(file.meta_value("config")).model;
}

TrainConfig checkpoint_train_config(const BlobFile& file) {
  if (file.meta_value("format") != kFormat) throw CheckpointError("not a model checkpoint");
  return config_from_json(file.meta_value("config")).train;
}

void restore_checkpoint(const BlobFile& file, TrainState& state) {
  if (file.meta_value("format") != kFormat) throw CheckpointError("not a model checkpoint");
  const int d = meta_int(file, "d");
  const int patch = meta_int(file, "patch_size");
  if (d != state.model.dim()) {
    throw ShapeError("checkpoint feature width d=" + std::to_string(d) + " does not match model d=" +
                     std::to_string(state.model.dim()));
  }
  if (patch != state.model.patch_size()) {
    throw ShapeError("checkpoint patch size " + std::to_string(patch) + " does not match model patch size " +
                     std::to_string(state.model.patch_size()));
  }
  if (file.meta_value("frozen_checksum") != hex64(state.model.params().frozen_checksum())) {
    throw CheckpointError("checkpoint was trained against a different frozen backbone");
  }
  const int epoch = meta_int(file, "epoch");
  const std::int64_t steps = std::stoll(file.meta_value("adam_steps"));
  if (epoch < 0 || steps < 0) throw CheckpointError("checkpoint epoch/step counters are negative");

  // Validate everything first so a bad file leaves the state untouched.
  std::vector<std::pair<Var, const Matrix*>> writes;
  for (const auto* e : state.model.params().trainable()) {
    const Matrix* m = file.tensor("param." + e->name);
    if (!m) throw CheckpointError("checkpoint is missing parameter " + e->name);
    if (m->rows() != e->var.rows() || m->cols() != e->var.cols()) {
      throw ShapeError("checkpoint parameter " + e->name + " has shape " + std::to_string(m->rows()) + "x" +
                       std::to_string(m->cols()) + ", model expects " + std::to_string(e->var.rows()) + "x" +
                       std::to_string(e->var.cols()));
    }
    writes.emplace_back(e->var, m);
  }
  std::map<std::string, AdamW::Moments> moments;
  for (const auto& [name, value] : file.tensors) {
    const bool is_m = name.rfind("adam.m.", 0) == 0;
    if (!is_m && name.rfind("adam.v.", 0) != 0) continue;
    const std::string pname = name.substr(7);
    const auto* entry = state.model.params().find(pname);
    if (!entry || !entry->trainable) throw CheckpointError("optimizer state for unknown parameter " + pname);
    if (value.rows() != entry->var.rows() || value.cols() != entry->var.cols()) {
      throw ShapeError("optimizer state for " + pname + " has the wrong shape");
    }
    (is_m ? moments[pname].m : moments[pname].v) = value;
  }
  for (const auto& [name, mom] : moments) {
    if (mom.m.size() == 0 || mom.v.size() == 0) throw CheckpointError("incomplete optimizer state for " + name);
  }
  const std::string* rng_bytes = file.blob("rng");
  if (!rng_bytes) throw CheckpointError("checkpoint is missing the rng state");
  std::mt19937_64 rng;
  std::istringstream rin(*rng_bytes);
  rin >> rng;
  if (!rin) throw CheckpointError("checkpoint rng state is corrupt");

  for (auto& [var, m] : writes) var.mutable_value() = *m;
  state.optimizer.restore(steps, std::move(moments));
  state.epoch = epoch;
  state.rng = rng;
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const BlobFile file = read_blob_file(path);
  const RunConfig cfg = config_from_json(file.meta_value("config"));
  TrainState state(cfg.model, cfg.train.seed);
  restore_checkpoint(file, state);
  return state;
}

}  // namespace vilaco
