#pragma once

// Corpus domain types: frame-level emotion features, word alignments,
// word-level emotion annotations, and the files that carry them.

#include "emofilm/matrix.hpp"

#include "json.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emofilm {

/// Fixed category set with stable integer codes 0–4.
enum class Emotion : int { Angry = 0, Happy = 1, Sad = 2, Surprise = 3, Neutral = 4 };
inline constexpr int kNumEmotions = 5;
inline constexpr double kDefaultHopSeconds = 0.02;

std::string_view emotion_name(Emotion e);
Emotion emotion_from_name(std::string_view name);
Emotion emotion_from_code(int code);
inline int code(Emotion e) { return static_cast<int>(e); }

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateSpanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::filesystem::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + what), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// T×D frame-level emotion features sampled every hop_s seconds.
class EmotionFeatureSequence {
 public:
  /// Throws ValidationError unless T ≥ 1, D ≥ 1, hop_s > 0 and all entries finite.
  EmotionFeatureSequence(double hop_s, Matrix frames);

  double hop_s() const { return hop_s_; }
  std::size_t dim() const { return frames_.cols(); }
  std::size_t length() const { return frames_.rows(); }
  const Matrix& frames() const { return frames_; }

 private:
  double hop_s_;
  Matrix frames_;
};

struct WordAlignment {
  std::string word;
  double start_s = 0.0;
  double end_s = 0.0;
  friend bool operator==(const WordAlignment&, const WordAlignment&) = default;
};

struct WordEmotionAnnotation {
  Emotion category = Emotion::Neutral;
  double intensity = 0.0;
  friend bool operator==(const WordEmotionAnnotation&, const WordEmotionAnnotation&) = default;
};

/// Half-open frame index range [lo, hi).
struct FrameSpan {
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::size_t size() const { return hi - lo; }
  friend bool operator==(const FrameSpan&, const FrameSpan&) = default;
};

struct Utterance {
  std::string utterance_id;
  std::string speaker_id;
  std::vector<WordAlignment> words;
  EmotionFeatureSequence features{kDefaultHopSeconds, Matrix(1, 1)};
  std::optional<std::vector<WordEmotionAnnotation>> annotations;
  std::optional<std::vector<int>> speech_tokens;
  std::optional<Emotion> global_label;

  // Text side of the toy TTS task: one entry per text token, and the index of
  // the word each token belongs to.
  std::vector<int> text_tokens;
  std::vector<int> word_of_token;

  // Corpus metadata ("none", "mild", "strong"; boundary = last word before the switch).
  std::string transition_kind;
  std::optional<std::size_t> boundary_word;
};

/// Parses JSON-lines {"word","start_s","end_s"}. Blank lines are skipped.
/// Throws ParseError (1-based line number) or ValidationError on overlap/order.
std::vector<WordAlignment> parse_alignment(std::string_view document);
std::string serialize_alignment(const std::vector<WordAlignment>& words);

/// lo = floor(start/hop), hi = min(T, ceil(end/hop)). Quotients within 1e-9
/// of an integer snap to it, so hop-aligned times map exactly.
FrameSpan frames_for_word(const WordAlignment& a, double hop_s, std::size_t num_frames);

/// Column means of the rows in span.
std::vector<double> masked_average_pool(const EmotionFeatureSequence& seq, FrameSpan span);

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Collects every invariant violation. speech_vocab bounds speech_tokens when given.
ValidationReport validate_utterance(const Utterance& u, std::optional<int> speech_vocab = std::nullopt);

nlohmann::json features_to_json(const EmotionFeatureSequence& seq);
EmotionFeatureSequence features_from_json(const nlohmann::json& j);

nlohmann::json annotations_to_json(const std::vector<WordEmotionAnnotation>& anns);
std::vector<WordEmotionAnnotation> annotations_from_json(const nlohmann::json& j);

/// Writes <stem>.features.json, <stem>.align.jsonl and <stem>.manifest.json
/// into dir; returns the manifest path.
std::filesystem::path write_utterance(const Utterance& u, const std::filesystem::path& dir,
                                      const std::string& stem);
Utterance read_utterance(const std::filesystem::path& manifest_path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace emofilm
