#pragma once

#include "emofilm/data.hpp"

#include "json.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace emofilm {

/// Time-ordered K-dimensional emotion vectors (class posteriors or raw features).
struct EmotionTrajectory {
  Matrix points;
  std::string kind = "posterior";

  /// Throws ValidationError for empty or non-finite trajectories.
  void validate() const;
};

/// Classic DTW: Euclidean local cost, steps {(1,0),(0,1),(1,1)}, no window,
/// unnormalized accumulated cost.
double dtw(const EmotionTrajectory& a, const EmotionTrajectory& b);

/// 100 × cosine similarity of the time-averaged vectors.
double emo_sim(const EmotionTrajectory& a, const EmotionTrajectory& b);

/// Accuracy per gold category; categories absent from gold are omitted.
std::map<Emotion, double> per_emotion_accuracy(std::span<const Emotion> predicted, std::span<const Emotion> gold);

struct UtteranceEval {
  std::string utterance_id;
  EmotionTrajectory trajectory;
  std::vector<Emotion> word_categories;
};

struct MetricReport {
  double emo_sim_percent = 0.0;
  double dtw_cost = 0.0;
  double overall_accuracy = 0.0;
  std::map<Emotion, double> per_category_accuracy;
  std::map<Emotion, std::size_t> category_counts;
  std::size_t n_utterances = 0;
  std::size_t n_words = 0;
  std::string trajectory_kind;

  nlohmann::json to_json() const;
};

/// Macro-averages dtw and emo_sim over utterances; pools word accuracy.
/// Utterances are matched by id; any id missing on either side is an error.
MetricReport evaluate_corpus(std::span<const UtteranceEval> generated, std::span<const UtteranceEval> gold);

}  // namespace emofilm
