#pragma once

#include "emofilm/autograd.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace emofilm {

/// Named trainable tensors, kept in insertion order for reproducible
/// iteration and serialization.
class ParameterSet {
 public:
  ParameterSet() = default;
  /// Copies are deep: the copy owns fresh leaves with equal values.
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  ag::Var& add(const std::string& name, Matrix init);
  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }
  std::vector<std::pair<std::string, ag::Var>>& items() { return items_; }

  void zero_grad();
  std::size_t count() const;
  double norm() const;
  /// Parameter counts aggregated by the name prefix before the first '.'.
  std::map<std::string, std::size_t> group_counts() const;

  nlohmann::json to_json() const;
  /// Overwrites values of existing parameters; shapes and names must match.
  void load_json(const nlohmann::json& params);

 private:
  std::vector<std::pair<std::string, ag::Var>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Deterministic seed derivation: one stream per (seed, label).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// Gaussian init N(0, stddev²), drawn from a stream keyed by (seed, name).
Matrix init_normal(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed,
                   const std::string& name);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig cfg);
  /// Clips by global norm, applies one update, returns the pre-clip norm.
  double step();

 private:
  ParameterSet& params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  long step_count_ = 0;
};

}  // namespace emofilm
