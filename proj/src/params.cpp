#include "vilaco/params.hpp"

#include "vilaco/errors.hpp"
#include "vilaco/types.hpp"

#include <algorithm>
#include <cmath>

namespace vilaco {

void validate_image(const ImageTensor& img) {
  if (img.height != kImageSize || img.width != kImageSize) {
    throw InputError("image must be " + std::to_string(kImageSize) + "x" + std::to_string(kImageSize) +
                     ", got " + std::to_string(img.height) + "x" + std::to_string(img.width));
  }
  if (img.data.size() != static_cast<std::size_t>(kChannels) * img.height * img.width) {
    throw InputError("image buffer does not hold 3 channels");
  }
  for (float v : img.data) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw InputError("image values must lie in [0, 1]");
  }
}

ag::Var ParamStore::add_trainable(std::string name, std::string group, ag::Matrix value) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  auto var = ag::parameter(std::move(value));
  entries_.push_back({std::move(name), std::move(group), var, true});
  return var;
}

ag::Var ParamStore::add_frozen(std::string name, std::string group, ag::Matrix value) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  auto var = ag::constant(std::move(value));
  entries_.push_back({std::move(name), std::move(group), var, false});
  return var;
}

void ParamStore::add_existing(std::string name, std::string group, ag::Var var) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  const bool trainable = var.requires_grad();
  entries_.push_back({std::move(name), std::move(group), std::move(var), trainable});
}

std::vector<const ParamStore::Entry*> ParamStore::trainable() const {
  std::vector<const Entry*> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(&e);
  }
  return out;
}

std::vector<std::string> ParamStore::groups(bool trainable) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.trainable == trainable && std::find(out.begin(), out.end(), e.group) == out.end()) {
      out.push_back(e.group);
    }
  }
  return out;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) {
    if (e.trainable) e.var.zero_grad();
  }
}

std::uint64_t ParamStore::frozen_checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : entries_) {
    if (e.trainable) continue;
    h = fnv1a(e.name.data(), e.name.size(), h);
    const auto& v = e.var.value();
    h = fnv1a(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), h);
  }
  return h;
}

ag::Matrix random_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

ag::Matrix random_uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace vilaco
