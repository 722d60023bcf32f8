#include "vilaco/cli.hpp"

#include "vilaco/config.hpp"
#include "vilaco/data.hpp"
#include "vilaco/errors.hpp"
#include "vilaco/metrics.hpp"
#include "vilaco/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace vilaco {

namespace fs = std::filesystem;

namespace {

struct GenArgs {
  int count = 100;
  double fake_ratio = 0.5;
  std::vector<std::string> kinds{"splice", "copy_move", "inpaint_blur"};
  double area_min = 0.05;
  double area_max = 0.3;
  std::uint64_t seed = 0;
  std::string out;
};

// Flags shared by commands that build a configuration.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<int> epochs;
  std::optional<int> warmup;
  std::optional<double> weight_decay;
  std::optional<std::uint64_t> seed;
  std::optional<int> checkpoint_every;
  std::optional<int> patch_size;
  std::optional<int> dim;
  std::optional<std::string> backend;
  std::optional<std::string> weights;
  bool no_augment = false;
  bool deterministic = false;
};

struct TrainArgs {
  ConfigArgs cfg;
  std::string data;
  std::string out;
  std::string resume;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string name = "eval";
};

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
};

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config_path, "JSON config file");
  cmd->add_option("--set", a.overrides, "key=value override (repeatable)");
  cmd->add_option("--lr", a.lr, "learning rate (default 0.0001)");
  cmd->add_option("--batch", a.batch, "batch size (default 32)");
  cmd->add_option("--epochs", a.epochs, "total epochs T_total (default 100)");
  cmd->add_option("--warmup", a.warmup, "warm-up epochs T_w (default 10)");
  cmd->add_option("--weight-decay", a.weight_decay, "AdamW weight decay");
  cmd->add_option("--seed", a.seed, "training seed");
  cmd->add_option("--checkpoint-every", a.checkpoint_every, "checkpoint period in epochs (0: final only)");
  cmd->add_option("--patch-size", a.patch_size, "encoder patch size");
  cmd->add_option("--dim", a.dim, "stub encoder width");
  cmd->add_option("--backend", a.backend, "stub | pretrained");
  cmd->add_option("--weights", a.weights, "pretrained encoder weights file");
  cmd->add_flag("--no-augment", a.no_augment, "disable crop/flip augmentation");
  cmd->add_flag("--deterministic", a.deterministic, "serial data order");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = load_config_file(a.config_path, cfg);
  for (const auto& o : a.overrides) apply_override(cfg, o);
  auto& t = cfg.train;
  auto& e = cfg.model.encoder;
  if (a.lr) t.lr = *a.lr;
  if (a.batch) t.batch = *a.batch;
  if (a.epochs) t.epochs = *a.epochs;
  if (a.warmup) t.warmup = *a.warmup;
  if (a.weight_decay) t.weight_decay = *a.weight_decay;
  if (a.seed) t.seed = *a.seed;
  if (a.checkpoint_every) t.checkpoint_every = *a.checkpoint_every;
  if (a.patch_size) e.patch_size = *a.patch_size;
  if (a.dim) e.dim = *a.dim;
  if (a.backend) e.backend = parse_backend(*a.backend);
  if (a.weights) e.weights_path = *a.weights;
  if (a.no_augment) t.augment = false;
  if (a.deterministic || deterministic_from_env()) t.shuffle = false;
  validate(t);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  GenSpec spec;
  spec.count = a.count;
  spec.fake_ratio = a.fake_ratio;
  spec.kinds.clear();
  for (const auto& k : a.kinds) spec.kinds.push_back(parse_tamper_kind(k));
  spec.area_min = a.area_min;
  spec.area_max = a.area_max;
  spec.seed = a.seed;
  validate(spec);
  out << generate_corpus(spec, a.out).string() << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.cfg);
  const fs::path dir(a.out);
  ensure_dir(dir);

  std::optional<TrainState> state;
  if (!a.resume.empty()) {
    const BlobFile file = read_blob_file(a.resume);
    cfg.model = checkpoint_model_config(file);
    state.emplace(cfg.model, cfg.train.seed);
    restore_checkpoint(file, *state);
  } else {
    state.emplace(cfg.model, cfg.train.seed);
  }
  const auto& t = cfg.train;
  out << "vilaco train: lr=" << fmt_g(t.lr) << " batch=" << t.batch << " epochs=" << t.epochs
      << " warmup=" << t.warmup << " weight_decay=" << fmt_g(t.weight_decay) << " seed=" << t.seed
      << " patch=" << cfg.model.encoder.patch_size << " d=" << state->model.dim()
      << " augment=" << (t.augment ? 1 : 0) << " shuffle=" << (t.shuffle ? 1 : 0) << "\n";

  const auto samples = load_train_split(a.data);
  if (samples.empty()) throw DatasetError("training split is empty: " + a.data);
  const TrainLoader loader(samples, t.batch, t.shuffle);
  FeatureCache cache;
  write_text(dir / "config.json", config_to_json(cfg));

  const fs::path log_path = dir / "train_log.tsv";
  const bool fresh = a.resume.empty() || !fs::exists(log_path);
  std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + log_path.string());
  if (fresh) log << kEpochLogHeader << "\n";
  out << kEpochLogHeader << "\n";

  const fs::path final_ckpt = dir / "checkpoint.bin";
  while (state->epoch < t.epochs) {
    const EpochLog entry = train_epoch(*state, loader, t, t.augment ? nullptr : &cache);
    const std::string line = format_epoch_log(entry);
    log << line << "\n" << std::flush;
    out << line << "\n" << std::flush;
    if (t.checkpoint_every > 0 && state->epoch % t.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.bin", state->epoch);
      save_checkpoint(dir / name, *state, t);
    }
  }
  save_checkpoint(final_ckpt, *state, t);
  out << "checkpoint: " << final_ckpt.string() << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const TrainState state = load_checkpoint(a.checkpoint);
  const auto samples = load_eval_split(a.data);
  if (samples.empty()) throw DatasetError("evaluation split is empty: " + a.data);
  const EvalReport report = evaluate(state.model, samples);
  const std::string table = report_table(report, a.name);
  if (!a.out.empty()) {
    const fs::path dir(a.out);
    ensure_dir(dir);
    write_text(dir / "report.json", report_json(report, a.name));
    write_text(dir / "report.txt", table);
  }
  out << table;
  return kExitOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const ImageTensor img = load_image(a.image);
  const TrainState state = load_checkpoint(a.checkpoint);
  const auto pred = state.model.forward(img);
  const fs::path image(a.image);
  const fs::path mask_path = a.out.empty() ? image.parent_path() / (image.stem().string() + "_mask.png") : fs::path(a.out);
  write_mask_png(mask_path, pred.mask);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "y_coarse=%.6f y_fine=%.6f", pred.coarse.prob.scalar(), pred.fine_prob.scalar());
  out << buf << "\nmask: " << mask_path.string() << "\n";
  return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& in : a.inputs) {
    std::ifstream f(in);
    if (!f) throw IoError("cannot read report: " + in);
    nlohmann::json j;
    try {
      f >> j;
      EvalReport r;
      r.p_f1 = j.at("p_f1").get<double>();
      r.i_f1 = j.at("i_f1").get<double>();
      r.c_f1 = j.at("c_f1").get<double>();
      r.iou = j.value("pixel_iou", 0.0);
      rows.emplace_back(j.value("dataset", fs::path(in).parent_path().filename().string()), r);
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("malformed report " + in + ": " + ex.what());
    }
  }
  const std::string table = report_table(rows);
  if (!a.out.empty()) write_text(a.out, table);
  out << table;
  return kExitOk;
}

}  // namespace

bool deterministic_from_env() {
  const char* v = std::getenv("VILACO_DETERMINISTIC");
  return v && std::string(v) == "1";
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"weakly supervised image forgery localization", "vilaco"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic forgery corpus");
  c_gen->add_option("--count", gen.count, "number of images");
  c_gen->add_option("--fake-ratio", gen.fake_ratio, "fraction of tampered images");
  c_gen->add_option("--kinds", gen.kinds, "splice, copy_move, inpaint_blur")->delimiter(',');
  c_gen->add_option("--area-min", gen.area_min, "minimum tampered area fraction");
  c_gen->add_option("--area-max", gen.area_max, "maximum tampered area fraction");
  c_gen->add_option("--seed", gen.seed, "generator seed");
  c_gen->add_option("--out", gen.out, "output directory")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train on image-level labels");
  add_config_flags(c_train, train.cfg);
  c_train->add_option("--data", train.data, "dataset root")->required();
  c_train->add_option("--out", train.out, "run directory")->required();
  c_train->add_option("--resume", train.resume, "checkpoint to continue from");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  c_eval->add_option("--data", ev.data, "dataset root")->required();
  c_eval->add_option("--out", ev.out, "directory for report.json and report.txt");
  c_eval->add_option("--name", ev.name, "dataset name in the report");

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "score one image and export its mask");
  c_pred->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
  c_pred->add_option("--image", pr.image, "input image")->required();
  c_pred->add_option("--out", pr.out, "mask PNG path (default: <image stem>_mask.png beside the image)");

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "tabulate evaluation reports");
  c_rep->add_option("inputs", rep.inputs, "report.json files")->required();
  c_rep->add_option("--out", rep.out, "write the table here too");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(gen, out);
    if (c_train->parsed()) return cmd_train(train, out);
    if (c_eval->parsed()) return cmd_eval(ev, out);
    if (c_pred->parsed()) return cmd_predict(pr, out);
    if (c_rep->parsed()) return cmd_report(rep, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace vilaco
