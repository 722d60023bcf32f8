#pragma once

#include "vilaco/autograd.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace vilaco {

// Named registry of every model tensor. Trainable entries are autograd
// leaves; frozen entries are constants and never see a gradient.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    ag::Var var;
    bool trainable = false;
  };

  ag::Var add_trainable(std::string name, std::string group, ag::Matrix value);
  ag::Var add_frozen(std::string name, std::string group, ag::Matrix value);
  // Registers a tensor owned elsewhere (e.g. frozen encoder weights).
  void add_existing(std::string name, std::string group, ag::Var var);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::vector<const Entry*> trainable() const;
  std::vector<std::string> groups(bool trainable) const;
  const Entry* find(const std::string& name) const;
  Entry* find(const std::string& name);

  void zero_grad();
  // FNV-1a over the bytes of every frozen tensor, in registration order.
  std::uint64_t frozen_checksum() const;

 private:
  std::vector<Entry> entries_;
};

// Seeded initialisers shared by the model components.
ag::Matrix random_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev);
ag::Matrix random_uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound);

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace vilaco
