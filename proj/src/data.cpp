#include "emofilm/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace emofilm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumEmotions> kNames = {"Angry", "Happy", "Sad", "Surprise",
                                                               "Neutral"};

double snap(double x) {
  const double r = std::round(x);
  return std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x)) ? r : x;
}

}  // namespace

std::string_view emotion_name(Emotion e) { return kNames.at(static_cast<std::size_t>(code(e))); }

Emotion emotion_from_name(std::string_view name) {
  for (int c = 0; c < kNumEmotions; ++c)
    if (kNames[static_cast<std::size_t>(c)] == name) return static_cast<Emotion>(c);
  throw ValidationError("unknown emotion category '" + std::string(name) + "'");
}

Emotion emotion_from_code(int c) {
  if (c < 0 || c >= kNumEmotions) throw ValidationError("emotion code " + std::to_string(c) + " out of range");
  return static_cast<Emotion>(c);
}

EmotionFeatureSequence::EmotionFeatureSequence(double hop_s, Matrix frames)
    : hop_s_(hop_s), frames_(std::move(frames)) {
  if (!(hop_s_ > 0.0) || !std::isfinite(hop_s_)) throw ValidationError("hop_s must be positive");
  if (frames_.rows() == 0) throw ValidationError("feature sequence has no frames");
  if (frames_.cols() == 0) throw ValidationError("feature dimensionality must be positive");
  for (std::size_t r = 0; r < frames_.rows(); ++r)
    for (double v : frames_.row(r))
      if (!std::isfinite(v)) throw ValidationError("non-finite feature value in frame " + std::to_string(r));
}

std::vector<WordAlignment> parse_alignment(std::string_view document) {
  std::vector<WordAlignment> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= document.size()) {
    const std::size_t nl = document.find('\n', pos);
    std::string_view line = document.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? document.size() + 1 : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("word") || !j.contains("start_s") || !j.contains("end_s") ||
        !j["word"].is_string() || !j["start_s"].is_number() || !j["end_s"].is_number())
      throw ParseError(line_no, "expected {\"word\": string, \"start_s\": number, \"end_s\": number}");
    WordAlignment a{j["word"].get<std::string>(), j["start_s"].get<double>(), j["end_s"].get<double>()};
    if (!(a.start_s >= 0.0) || !(a.start_s < a.end_s) || !std::isfinite(a.end_s))
      throw ValidationError("word '" + a.word + "' has invalid span [" + std::to_string(a.start_s) + ", " +
                            std::to_string(a.end_s) + ")");
    if (!out.empty()) {
      const WordAlignment& prev = out.back();
      if (a.start_s < prev.start_s)
        throw ValidationError("words '" + prev.word + "' and '" + a.word + "' are out of temporal order");
      if (a.start_s < prev.end_s)
        throw ValidationError("words '" + prev.word + "' and '" + a.word + "' overlap");
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::string serialize_alignment(const std::vector<WordAlignment>& words) {
  std::string out;
  for (const auto& w : words) {
    json j = {{"word", w.word}, {"start_s", w.start_s}, {"end_s", w.end_s}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

FrameSpan frames_for_word(const WordAlignment& a, double hop_s, std::size_t num_frames) {
  if (!(hop_s > 0.0)) throw ValidationError("frames_for_word: hop_s must be positive");
  if (num_frames == 0) throw ValidationError("frames_for_word: no frames");
  const double lo = std::floor(snap(a.start_s / hop_s));
  const double hi = std::min(static_cast<double>(num_frames), std::ceil(snap(a.end_s / hop_s)));
  if (!(hi > lo) || lo < 0.0)
    throw DegenerateSpanError("word '" + a.word + "' maps to an empty frame span (T=" +
                              std::to_string(num_frames) + ")");
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

std::vector<double> masked_average_pool(const EmotionFeatureSequence& seq, FrameSpan span) {
  if (span.hi <= span.lo) throw DegenerateSpanError("masked_average_pool: empty span");
  if (span.hi > seq.length()) throw DegenerateSpanError("masked_average_pool: span beyond sequence");
  std::vector<double> out(seq.dim(), 0.0);
  for (std::size_t r = span.lo; r < span.hi; ++r)
    for (std::size_t c = 0; c < seq.dim(); ++c) out[c] += seq.frames()(r, c);
  const double n = static_cast<double>(span.size());
  for (double& v : out) v /= n;
  return out;
}

ValidationReport validate_utterance(const Utterance& u, std::optional<int> speech_vocab) {
  ValidationReport report;
  auto add = [&](std::string msg) { report.violations.push_back(std::move(msg)); };
  if (u.utterance_id.empty()) add("missing utterance_id");
  if (u.words.empty()) add("utterance has no words");

  const double hop = u.features.hop_s();
  const std::size_t T = u.features.length();
  for (std::size_t i = 0; i < u.words.size(); ++i) {
    const WordAlignment& w = u.words[i];
    if (!(w.start_s >= 0.0) || !(w.start_s < w.end_s))
      add("word '" + w.word + "' has invalid span");
    if (i > 0 && w.start_s < u.words[i - 1].end_s)
      add("words '" + u.words[i - 1].word + "' and '" + w.word + "' overlap or are unordered");
    if (w.start_s / hop >= static_cast<double>(T) - 1e-9) {
      add("word '" + w.word + "' lies beyond the feature sequence (" + std::to_string(T) + " frames)");
      continue;
    }
    try {
      frames_for_word(w, hop, T);
    } catch (const DegenerateSpanError&) {
      add("word '" + w.word + "' maps to an empty frame span");
    }
  }

  if (u.annotations) {
    if (u.annotations->size() != u.words.size())
      add("annotation count mismatch: " + std::to_string(u.annotations->size()) + " annotations for " +
          std::to_string(u.words.size()) + " words");
    for (std::size_t i = 0; i < u.annotations->size(); ++i) {
      const auto& a = (*u.annotations)[i];
      if (code(a.category) < 0 || code(a.category) >= kNumEmotions)
        add("annotation " + std::to_string(i) + " has an invalid category");
      if (!(a.intensity >= 0.0 && a.intensity <= 1.0))
        add("annotation " + std::to_string(i) + " intensity outside [0,1]");
    }
  }

  if (u.text_tokens.size() != u.word_of_token.size())
    add("text_tokens and word_of_token lengths differ");
  for (int w : u.word_of_token)
    if (w < 0 || static_cast<std::size_t>(w) >= u.words.size()) {
      add("token mapped to missing word index " + std::to_string(w));
      break;
    }
  for (int t : u.text_tokens)
    if (t < 0) {
      add("negative text token");
      break;
    }

  if (u.speech_tokens) {
    if (u.speech_tokens->size() != u.text_tokens.size())
      add("speech_tokens length differs from text_tokens");
    for (int s : *u.speech_tokens)
      if (s < 0 || (speech_vocab && s >= *speech_vocab)) {
        add("speech token " + std::to_string(s) + " outside vocabulary");
        break;
      }
  }
  return report;
}

json features_to_json(const EmotionFeatureSequence& seq) {
  return {{"hop_s", seq.hop_s()}, {"dim", seq.dim()}, {"frames", seq.frames().to_rows()}};
}

EmotionFeatureSequence features_from_json(const json& j) {
  if (!j.is_object() || !j.contains("hop_s") || !j.contains("dim") || !j.contains("frames"))
    throw ValidationError("feature file must contain hop_s, dim and frames");
  const auto rows = j.at("frames").get<std::vector<std::vector<double>>>();
  const auto dim = j.at("dim").get<std::size_t>();
  for (std::size_t r = 0; r < rows.size(); ++r)
    if (rows[r].size() != dim)
      throw ValidationError("frame " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                            " entries, expected " + std::to_string(dim));
  return EmotionFeatureSequence(j.at("hop_s").get<double>(), rows.empty() ? Matrix() : Matrix::from_rows(rows));
}

json annotations_to_json(const std::vector<WordEmotionAnnotation>& anns) {
  json arr = json::array();
  for (const auto& a : anns) arr.push_back({{"category", emotion_name(a.category)}, {"intensity", a.intensity}});
  return arr;
}

std::vector<WordEmotionAnnotation> annotations_from_json(const json& j) {
  std::vector<WordEmotionAnnotation> out;
  for (const auto& a : j) {
    WordEmotionAnnotation ann{emotion_from_name(a.at("category").get<std::string>()),
                              a.at("intensity").get<double>()};
    if (!(ann.intensity >= 0.0 && ann.intensity <= 1.0))
      throw ValidationError("annotation intensity outside [0,1]");
    out.push_back(ann);
  }
  return out;
}

fs::path write_utterance(const Utterance& u, const fs::path& dir, const std::string& stem) {
  const std::string feat_name = stem + ".features.json";
  const std::string align_name = stem + ".align.jsonl";
  write_json_file(dir / feat_name, features_to_json(u.features));
  write_text_file(dir / align_name, serialize_alignment(u.words));

  json m = {{"utterance_id", u.utterance_id},
            {"speaker_id", u.speaker_id},
            {"alignment", align_name},
            {"features", feat_name},
            {"text_tokens", u.text_tokens},
            {"word_of_token", u.word_of_token},
            {"transition_kind", u.transition_kind}};
  if (u.annotations) m["annotations"] = annotations_to_json(*u.annotations);
  if (u.speech_tokens) m["speech_tokens"] = *u.speech_tokens;
  if (u.global_label) m["global_label"] = emotion_name(*u.global_label);
  if (u.boundary_word) m["boundary_word"] = *u.boundary_word;
  const fs::path manifest = dir / (stem + ".manifest.json");
  write_json_file(manifest, m);
  return manifest;
}

Utterance read_utterance(const fs::path& manifest_path) {
  const json m = read_json_file(manifest_path);
  const fs::path base = manifest_path.parent_path();
  try {
    Utterance u;
    u.utterance_id = m.at("utterance_id").get<std::string>();
    u.speaker_id = m.value("speaker_id", "");
    u.words = parse_alignment(read_text_file(base / m.at("alignment").get<std::string>()));
    u.features = features_from_json(read_json_file(base / m.at("features").get<std::string>()));
    if (m.contains("annotations")) u.annotations = annotations_from_json(m["annotations"]);
    if (m.contains("speech_tokens")) u.speech_tokens = m["speech_tokens"].get<std::vector<int>>();
    if (m.contains("global_label")) u.global_label = emotion_from_name(m["global_label"].get<std::string>());
    u.text_tokens = m.value("text_tokens", std::vector<int>{});
    u.word_of_token = m.value("word_of_token", std::vector<int>{});
    u.transition_kind = m.value("transition_kind", "");
    if (m.contains("boundary_word")) u.boundary_word = m["boundary_word"].get<std::size_t>();
    return u;
  } catch (const json::exception& e) {
    throw IoError(manifest_path, std::string("invalid manifest: ") + e.what());
  }
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path(), "cannot create directory: " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError(path, "write failed");
}

json read_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(1) + "\n"); }

}  // namespace emofilm
