#pragma once

#include "emofilm/params.hpp"

#include "json.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>

namespace emofilm {

inline constexpr int kCheckpointSchemaVersion = 1;

/// Optimizer and schedule. Defaults: Adam, batch size 4, 5 epochs.
struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 4;
  int epochs = 5;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 1.0;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, adam_epsilon, clip_norm}; }
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t batch, double param_norm, const std::string& detail)
      : std::runtime_error("non-finite loss at batch " + std::to_string(batch) + " (parameter norm " +
                           std::to_string(param_norm) + "): " + detail),
        batch_(batch),
        param_norm_(param_norm) {}
  std::size_t batch() const { return batch_; }
  double param_norm() const { return param_norm_; }

 private:
  std::size_t batch_;
  double param_norm_;
};

class IncompatibleCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks schema_version and kind; throws IncompatibleCheckpoint otherwise.
void check_checkpoint(const nlohmann::json& ckpt, const std::string& kind);

}  // namespace emofilm
