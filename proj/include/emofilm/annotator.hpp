#pragma once

// Word-level emotion annotator: frame features → contextual encoder →
// masked average pooling per word span → category and intensity heads.

#include "emofilm/data.hpp"
#include "emofilm/params.hpp"
#include "emofilm/synth.hpp"
#include "emofilm/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace emofilm {

struct AnnotatorConfig {
  int input_dim = 16;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ff = 128;
  int categories = kNumEmotions;

  void validate() const;
};

nlohmann::json annotator_config_to_json(const AnnotatorConfig& c);
AnnotatorConfig annotator_config_from_json(const nlohmann::json& j);

struct AnnotatorLossConfig {
  double lambda_cls = 1.0;
  double lambda_reg = 1.0;

  void validate() const;
};

class AnnotatorModel {
 public:
  AnnotatorModel(AnnotatorConfig cfg, std::uint64_t seed);

  struct Output {
    ag::Var logits;     // W×C
    ag::Var intensity;  // W×1, strictly inside (0,1)
  };

  Output forward(const EmotionFeatureSequence& seq, std::span<const WordAlignment> words) const;
  Output forward_spans(const Matrix& frames, std::span<const FrameSpan> spans) const;

  const AnnotatorConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  nlohmann::json to_checkpoint(const nlohmann::json& extra_config = nlohmann::json::object()) const;
  static AnnotatorModel from_checkpoint(const nlohmann::json& ckpt);

 private:
  AnnotatorConfig cfg_;
  std::uint64_t seed_;
  ParameterSet params_;
};

struct AnnotatorLoss {
  double total = 0.0;
  double cls = 0.0;
  double reg = 0.0;
};

struct AnnotatorLossVars {
  ag::Var total, cls, reg;
};

/// λ_cls · mean CE(logits, gold codes) + λ_reg · mean (intensity − gold)².
AnnotatorLossVars annotator_loss(const ag::Var& logits, const ag::Var& intensity,
                                 std::span<const WordEmotionAnnotation> golds, const AnnotatorLossConfig& cfg);
AnnotatorLoss annotator_loss(const Matrix& logits, const Matrix& intensity,
                             std::span<const WordEmotionAnnotation> golds, const AnnotatorLossConfig& cfg);

/// Argmax with ties broken toward the lowest category code.
Emotion argmax_category(std::span<const double> logits);

std::vector<WordEmotionAnnotation> annotate(const AnnotatorModel& m, const Utterance& u);

struct AnnotatorTrainResult {
  AnnotatorModel model;
  std::vector<nlohmann::json> log;  // one record per epoch, epoch 0 = before training
  int best_epoch = 0;
};

AnnotatorTrainResult train_annotator(std::span<const Utterance* const> train, std::span<const Utterance* const> dev,
                                     const AnnotatorConfig& model_cfg, const TrainConfig& cfg,
                                     const AnnotatorLossConfig& loss_cfg);
AnnotatorTrainResult train_annotator(const Corpus& corpus, const AnnotatorConfig& model_cfg, const TrainConfig& cfg,
                                     const AnnotatorLossConfig& loss_cfg);

struct AnnotatorEval {
  AnnotatorLoss loss;
  double accuracy = 0.0;
  double intensity_mae = 0.0;
  std::size_t words = 0;
};

AnnotatorEval evaluate_annotator(const AnnotatorModel& m, std::span<const Utterance* const> utterances,
                                 const AnnotatorLossConfig& loss_cfg);

}  // namespace emofilm
