#pragma once

// Deterministic synthetic corpus with known word-level emotion ground truth.
//
// Frames of a word with gold (category c, intensity s) are drawn as
//   neutral_mean + s·(mean_c − neutral_mean) + N(0, noise_sigma²)
// and the toy speech-token target of text token x in a word of category c is
// x·C + c, so emotion is required to predict the targets.

#include "emofilm/data.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace emofilm {

struct EmotionBasis {
  Matrix class_means;  // C×D
  int neutral_index = code(Emotion::Neutral);
  double noise_sigma = 1.0;

  double min_pairwise_distance() const;
};

/// Class means are N(0, spacing²) draws; spacing grows by 25% until every
/// pair is at least `separation`·noise_sigma apart (separation ≥ 4).
EmotionBasis make_emotion_basis(int categories, int dim, std::uint64_t seed, double noise_sigma = 1.0,
                                double separation = 16.0);

nlohmann::json basis_to_json(const EmotionBasis& b);
EmotionBasis basis_from_json(const nlohmann::json& j);

enum class TransitionKind { None, Mild, Strong };
std::string_view transition_name(TransitionKind k);
TransitionKind transition_from_name(std::string_view name);

struct CorpusSpec {
  std::string name = "corpus";
  int n_utterances = 100;
  std::pair<int, int> words_per_utterance{4, 8};
  std::pair<int, int> frames_per_word{3, 8};
  std::pair<int, int> tokens_per_word{1, 2};
  TransitionKind transition_kind = TransitionKind::None;
  std::uint64_t seed = 0;
  int text_vocab_size = 16;
  std::vector<std::string> speakers{"spk0", "spk1", "spk2", "spk3", "spk4"};
  double hop_s = kDefaultHopSeconds;
  /// Forces the category of "none" utterances (default: uniform draw).
  std::optional<Emotion> fixed_category;
  /// Forces the intensity of "none" utterances with a non-neutral category.
  std::optional<double> fixed_intensity;

  void validate() const;
};

nlohmann::json spec_to_json(const CorpusSpec& s);
CorpusSpec spec_from_json(const nlohmann::json& j);

/// Pure function of (spec, basis, index).
Utterance synth_utterance(const CorpusSpec& spec, const EmotionBasis& basis, int index);

/// Writes every utterance plus <out_dir>/index.json; returns the index path.
std::filesystem::path build_corpus(const CorpusSpec& spec, const EmotionBasis& basis,
                                   const std::filesystem::path& out_dir);

/// Concatenates part indices into one index at `out_index` (paths rebased).
std::filesystem::path merge_corpus_indices(const std::vector<std::filesystem::path>& parts,
                                           const std::filesystem::path& out_index);

struct Corpus {
  std::filesystem::path index_path;
  nlohmann::json index;
  std::vector<Utterance> utterances;
  std::map<std::string, std::string> split_of;  // utterance id → train/dev/test

  std::vector<const Utterance*> split(const std::string& name) const;
  std::optional<EmotionBasis> basis() const;
};

Corpus load_corpus(const std::filesystem::path& index_path);

}  // namespace emofilm
