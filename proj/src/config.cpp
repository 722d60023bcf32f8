#include "vilaco/config.hpp"

#include "vilaco/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace vilaco {

namespace {

using Json = nlohmann::ordered_json;

Json to_doc(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  Json j;
  j["encoder"] = {{"patch_size", m.encoder.patch_size},
                  {"dim", m.encoder.dim},
                  {"backend", std::string(backend_name(m.encoder.backend))},
                  {"seed", m.encoder.seed},
                  {"weights_path", m.encoder.weights_path},
                  {"heads", m.encoder.heads}};
  j["adapter"] = {{"window", m.adapter.window},
                  {"shift", m.adapter.shift},
                  {"heads", m.adapter.heads},
                  {"sigma_dist", m.adapter.sigma_dist}};
  j["prompt"] = {{"length", m.prompt_length}};
  j["reasoning"] = {{"heads", m.reasoning.heads}, {"ffn_mult", m.reasoning.ffn_mult}};
  j["coarse"] = {{"k_ratio", m.coarse.k_ratio}};
  j["decoder"] = {{"channels", m.decoder.channels}, {"init_prior", m.decoder.init_prior}};
  j["cpc"] = {{"tau_fg", m.cpc.tau_fg}, {"tau_bg", m.cpc.tau_bg}, {"gamma", m.cpc.gamma},
              {"max_pairs", m.cpc.max_pairs}};
  j["model"] = {{"init_seed", m.init_seed}};
  j["train"] = {{"lr", t.lr},
                {"batch", t.batch},
                {"epochs", t.epochs},
                {"warmup", t.warmup},
                {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"seed", t.seed},
                {"checkpoint_every", t.checkpoint_every},
                {"augment", t.augment},
                {"shuffle", t.shuffle},
                {"loss_coarse", t.losses.coarse},
                {"loss_fine", t.losses.fine},
                {"loss_cpc", t.losses.cpc}};
  return j;
}

RunConfig from_doc(const Json& j) {
  RunConfig c;
  auto& m = c.model;
  auto& t = c.train;
  try {
    const auto& e = j.at("encoder");
    m.encoder.patch_size = e.at("patch_size").get<int>();
    m.encoder.dim = e.at("dim").get<int>();
    m.encoder.backend = parse_backend(e.at("backend").get<std::string>());
    m.encoder.seed = e.at("seed").get<std::uint64_t>();
    m.encoder.weights_path = e.at("weights_path").get<std::string>();
    m.encoder.heads = e.at("heads").get<int>();
    const auto& a = j.at("adapter");
    m.adapter.window = a.at("window").get<int>();
    m.adapter.shift = a.at("shift").get<int>();
    m.adapter.heads = a.at("heads").get<int>();
    m.adapter.sigma_dist = a.at("sigma_dist").get<double>();
    m.prompt_length = j.at("prompt").at("length").get<int>();
    m.reasoning.heads = j.at("reasoning").at("heads").get<int>();
    m.reasoning.ffn_mult = j.at("reasoning").at("ffn_mult").get<int>();
    m.coarse.k_ratio = j.at("coarse").at("k_ratio").get<double>();
    m.decoder.channels = j.at("decoder").at("channels").get<int>();
    m.decoder.init_prior = j.at("decoder").at("init_prior").get<double>();
    const auto& p = j.at("cpc");
    m.cpc.tau_fg = p.at("tau_fg").get<double>();
    m.cpc.tau_bg = p.at("tau_bg").get<double>();
    m.cpc.gamma = p.at("gamma").get<double>();
    m.cpc.max_pairs = p.at("max_pairs").get<int>();
    m.init_seed = j.at("model").at("init_seed").get<std::uint64_t>();
    const auto& r = j.at("train");
    t.lr = r.at("lr").get<double>();
    t.batch = r.at("batch").get<int>();
    t.epochs = r.at("epochs").get<int>();
    t.warmup = r.at("warmup").get<int>();
    t.weight_decay = r.at("weight_decay").get<double>();
    t.beta1 = r.at("beta1").get<double>();
    t.beta2 = r.at("beta2").get<double>();
    t.eps = r.at("eps").get<double>();
    t.seed = r.at("seed").get<std::uint64_t>();
    t.checkpoint_every = r.at("checkpoint_every").get<int>();
    t.augment = r.at("augment").get<bool>();
    t.shuffle = r.at("shuffle").get<bool>();
    t.losses.coarse = r.at("loss_coarse").get<bool>();
    t.losses.fine = r.at("loss_fine").get<bool>();
    t.losses.cpc = r.at("loss_cpc").get<bool>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("invalid config: ") + ex.what());
  }
  return c;
}

// Replaces `slot` with `value`, keeping the slot's JSON kind.
void assign(Json& slot, const Json& value, const std::string& key) {
  const bool ok = (slot.is_boolean() && value.is_boolean()) ||
                  (slot.is_number_float() && value.is_number()) ||
                  (slot.is_number_unsigned() && value.is_number_unsigned()) ||
                  (slot.is_number_integer() && !slot.is_number_unsigned() && value.is_number_integer()) ||
                  (slot.is_string() && value.is_string());
  if (!ok) throw ConfigError("config key " + key + ": expected " + std::string(slot.type_name()));
  if (slot.is_number_float()) {
    slot = value.get<double>();
  } else {
    slot = value;
  }
}

void merge(Json& base, const Json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config " + (prefix.empty() ? "document" : prefix) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key: " + full);
    Json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, full);
    } else {
      assign(slot, value, full);
    }
  }
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return to_doc(cfg).dump(2) + "\n"; }

RunConfig config_from_json(std::string_view text, const RunConfig& base) {
  Json patch;
  try {
    patch = Json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
  }
  Json doc = to_doc(base);
  merge(doc, patch, "");
  return from_doc(doc);
}

RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), base);
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override must look like key=value: " + std::string(assignment));
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  Json doc = to_doc(cfg);
  Json* slot = &doc;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!slot->is_object() || !slot->contains(part)) throw ConfigError("unknown config key: " + key);
    slot = &(*slot)[part];
  }
  if (slot->is_object()) throw ConfigError("config key names a section, not a value: " + key);
  Json value;
  if (slot->is_string()) {
    value = raw;
  } else {
    try {
      value = Json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      throw ConfigError("cannot parse value for " + key + ": " + raw);
    }
  }
  assign(*slot, value, key);
  cfg = from_doc(doc);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  const Json doc = to_doc(RunConfig{});
  for (const auto& [section, body] : doc.items()) {
    for (const auto& [key, _] : body.items()) keys.push_back(section + "." + key);
  }
  return keys;
}

}  // namespace vilaco
