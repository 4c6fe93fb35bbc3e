#pragma once

// Emotion-modulated autoregressive speech-token generator.
//
//   h_text  = text_embedding + positions              (memory, one row per text token + end marker)
//   e       = category_embedding[c] + s · intensity_projection
//   fused   = W_fuse [h_text ; e] + b
//   h̃_text  = (1 + γ') ⊙ h_text + β,  [γ' ; β] = W_film fused + b   (zero-initialized)
//
// A causal transformer decoder reads previous speech tokens, cross-attends to
// h̃_text, and predicts the next speech token and the emotion of each step.

#include "emofilm/data.hpp"
#include "emofilm/params.hpp"
#include "emofilm/synth.hpp"
#include "emofilm/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emofilm {

enum class ModulationVariant { Film, Addition, None };
std::string_view variant_name(ModulationVariant v);
ModulationVariant variant_from_name(std::string_view name);

enum class AnnotationSource { GoldWordLevel, GlobalOnly, None };
std::string_view annotation_source_name(AnnotationSource s);
AnnotationSource annotation_source_from_name(std::string_view name);

struct EFiLMConfig {
  int text_vocab = 16;
  int categories = kNumEmotions;
  int embed = 64;
  int emotion_dim = 32;
  int heads = 4;
  int ff = 128;
  int decoder_layers = 1;
  ModulationVariant variant = ModulationVariant::Film;

  void validate() const;
  /// V = text_vocab · C under the toy coupling.
  int speech_vocab() const { return text_vocab * categories; }
  int eos() const { return speech_vocab(); }
  int bos() const { return speech_vocab() + 1; }
  /// Text-side end marker appended to every memory sequence.
  int text_end() const { return text_vocab; }
};

nlohmann::json efilm_config_to_json(const EFiLMConfig& c);
EFiLMConfig efilm_config_from_json(const nlohmann::json& j);

struct GenLossConfig {
  double epsilon = 0.1;
  double lambda_emo = 0.3;

  void validate() const;
};

/// Ragged batch of teacher-forcing targets; row counts L_i = T_i per sequence.
struct TtsBatch {
  std::vector<std::vector<int>> speech_targets;
  std::vector<std::vector<int>> emotion_labels;
  int vocab = 0;

  std::size_t total_tokens() const;  // M
  std::size_t total_steps() const;   // N
};

/// Label-smoothed next-token cross-entropy. logits[i] has ≥ L_i rows; extra rows are padding.
ag::Var tts_loss(std::span<const ag::Var> logits, const TtsBatch& batch, double epsilon);
double tts_loss(std::span<const Matrix> logits, const TtsBatch& batch, double epsilon);
/// Step-wise emotion cross-entropy over non-padded steps.
ag::Var emo_loss(std::span<const ag::Var> step_logits, const TtsBatch& batch);
double emo_loss(std::span<const Matrix> step_logits, const TtsBatch& batch);
ag::Var total_loss(const ag::Var& l_tts, const ag::Var& l_emo, const GenLossConfig& cfg);
double total_loss(double l_tts, double l_emo, const GenLossConfig& cfg);

/// γ ⊙ h + β, row-wise; gamma and beta are 1×E or n×E.
Matrix apply_film(const Matrix& h, const Matrix& gamma, const Matrix& beta);

/// One training/inference example derived from an utterance.
struct TtsExample {
  std::string utterance_id;
  std::vector<int> memory_tokens;  // text tokens + end marker
  std::vector<int> memory_words;   // word index per memory row (end marker → last word)
  std::vector<WordEmotionAnnotation> annotations;  // conditioning, one per word
  bool emotion_present = true;
  std::vector<int> targets;         // speech tokens + EOS
  std::vector<int> emotion_labels;  // per decoder step
  std::optional<std::size_t> boundary_step;  // first step after a strong transition
};

/// `conditioning` overrides the annotations used for gold_word_level
/// (e.g. annotator predictions); step labels always follow the conditioning
/// annotations, falling back to gold for source none.
TtsExample make_tts_example(const Utterance& u, AnnotationSource source, const EFiLMConfig& cfg,
                            const std::vector<WordEmotionAnnotation>* conditioning = nullptr);

class EFiLMModel {
 public:
  EFiLMModel(EFiLMConfig cfg, std::uint64_t seed);

  struct Outputs {
    ag::Var speech_logits;   // L×(V+1)
    ag::Var emotion_logits;  // L×C
  };

  /// h_text for memory tokens.
  ag::Var text_states(std::span<const int> memory_tokens) const;
  /// Per-row emotion vectors; word_of_row indexes annotations.
  ag::Var encode_emotion(std::span<const WordEmotionAnnotation> annotations, std::span<const int> word_of_row) const;
  /// Concatenate-then-project fusion of text and emotion features.
  ag::Var fuse(const ag::Var& h_text, const ag::Var& emotion) const;
  /// h̃_text according to the configured variant.
  ag::Var modulate(const ag::Var& h_text, const ag::Var& fused) const;
  /// Full conditioning path: memory rows ready for cross-attention.
  ag::Var memory(const TtsExample& ex) const;
  Outputs decode(const ag::Var& memory, std::span<const int> previous_tokens) const;
  /// Teacher-forced forward over ex.targets.
  Outputs forward(const TtsExample& ex) const;

  const EFiLMConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  nlohmann::json to_checkpoint(const nlohmann::json& extra_config = nlohmann::json::object()) const;
  static EFiLMModel from_checkpoint(const nlohmann::json& ckpt);

 private:
  EFiLMConfig cfg_;
  std::uint64_t seed_;
  ParameterSet params_;
};

struct GenerationMode {
  bool sampled = false;
  std::uint64_t seed = 0;
};

struct Generation {
  std::vector<int> tokens;  // includes EOS when emitted
  Matrix posteriors;        // one emotion posterior row per generated step
  GenerationMode mode;

  nlohmann::json to_json() const;
  static Generation from_json(const nlohmann::json& j);
};

Generation generate(const EFiLMModel& m, const TtsExample& ex, int max_len, GenerationMode mode = {});

struct TtsEval {
  double tts_loss = 0.0;
  double emo_loss = 0.0;
  double total_loss = 0.0;
  double token_accuracy = 0.0;    // teacher-forced
  double emotion_accuracy = 0.0;  // per-step argmax vs labels
};

TtsEval evaluate_tts(const EFiLMModel& m, std::span<const TtsExample> examples, const GenLossConfig& loss_cfg);

struct EFiLMTrainResult {
  EFiLMModel model;
  std::vector<nlohmann::json> log;
  int best_epoch = 0;
};

EFiLMTrainResult train_efilm(std::span<const TtsExample> train, std::span<const TtsExample> dev,
                             const EFiLMConfig& model_cfg, const TrainConfig& cfg, const GenLossConfig& loss_cfg);
EFiLMTrainResult train_efilm(const Corpus& corpus, const EFiLMConfig& model_cfg, const TrainConfig& cfg,
                             const GenLossConfig& loss_cfg, AnnotationSource source);

/// Fraction of gold speech-token positions (EOS excluded) that free-running
/// generation reproduces; missing positions count as errors.
double generation_accuracy(const Generation& g, const TtsExample& ex);

/// True when the per-step argmax changes exactly once, at a step within
/// `tolerance` of `boundary_step`.
bool switches_once_near(const Matrix& posteriors, std::size_t boundary_step, std::size_t tolerance = 2);

}  // namespace emofilm
