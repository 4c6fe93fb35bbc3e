#include "emofilm/training.hpp"

#include "emofilm/data.hpp"

namespace emofilm {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("adam betas must lie in [0,1)");
  if (!(adam_epsilon > 0.0)) throw ValidationError("adam epsilon must be positive");
}

json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"seed", c.seed},                   {"beta1", c.beta1},           {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},   {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.validate();
  return c;
}

void check_checkpoint(const json& ckpt, const std::string& kind) {
  if (!ckpt.is_object() || !ckpt.contains("schema_version"))
    throw IncompatibleCheckpoint("checkpoint has no schema_version");
  const int version = ckpt["schema_version"].get<int>();
  if (version != kCheckpointSchemaVersion)
    throw IncompatibleCheckpoint("checkpoint schema_version " + std::to_string(version) +
                                 " is not supported (expected " + std::to_string(kCheckpointSchemaVersion) + ")");
  if (!kind.empty() && ckpt.value("kind", "") != kind)
    throw IncompatibleCheckpoint("checkpoint kind '" + ckpt.value("kind", "") + "' where '" + kind + "' was expected");
}

}  // namespace emofilm
