#include "emofilm/synth.hpp"

#include "emofilm/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <random>

namespace emofilm {

namespace fs = std::filesystem;
using nlohmann::json;

double EmotionBasis::min_pairwise_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < class_means.rows(); ++a)
    for (std::size_t b = a + 1; b < class_means.rows(); ++b) {
      double s = 0.0;
      for (std::size_t d = 0; d < class_means.cols(); ++d) {
        const double diff = class_means(a, d) - class_means(b, d);
        s += diff * diff;
      }
      best = std::min(best, std::sqrt(s));
    }
  return best;
}

EmotionBasis make_emotion_basis(int categories, int dim, std::uint64_t seed, double noise_sigma,
                                double separation) {
  if (categories != kNumEmotions) throw ValidationError("emotion basis needs exactly 5 categories");
  if (dim < 2) throw ValidationError("emotion basis needs dim >= 2");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
  if (!(separation >= 4.0)) throw ValidationError("separation must be at least 4 noise sigmas");

  std::mt19937_64 rng(derive_seed(seed, "emotion-basis"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double target = separation * std::max(noise_sigma, 1e-12);
  double spacing = target / std::sqrt(2.0 * dim);
  EmotionBasis basis;
  basis.noise_sigma = noise_sigma;
  basis.neutral_index = code(Emotion::Neutral);
  for (;;) {
    basis.class_means = Matrix(static_cast<std::size_t>(categories), static_cast<std::size_t>(dim));
    for (double& v : basis.class_means.values()) v = spacing * normal(rng);
    if (basis.min_pairwise_distance() >= target) return basis;
    spacing *= 1.25;
  }
}

json basis_to_json(const EmotionBasis& b) {
  return {{"class_means", b.class_means.to_rows()}, {"neutral_index", b.neutral_index},
          {"noise_sigma", b.noise_sigma}};
}

EmotionBasis basis_from_json(const json& j) {
  EmotionBasis b;
  b.class_means = Matrix::from_rows(j.at("class_means").get<std::vector<std::vector<double>>>());
  b.neutral_index = j.at("neutral_index").get<int>();
  b.noise_sigma = j.at("noise_sigma").get<double>();
  return b;
}

std::string_view transition_name(TransitionKind k) {
  switch (k) {
    case TransitionKind::None: return "none";
    case TransitionKind::Mild: return "mild";
    case TransitionKind::Strong: return "strong";
  }
  return "none";
}

TransitionKind transition_from_name(std::string_view name) {
  if (name == "none") return TransitionKind::None;
  if (name == "mild") return TransitionKind::Mild;
  if (name == "strong") return TransitionKind::Strong;
  throw ValidationError("unknown transition kind '" + std::string(name) + "'");
}

void CorpusSpec::validate() const {
  auto range_ok = [](std::pair<int, int> r) { return r.first >= 1 && r.first <= r.second; };
  if (n_utterances < 1) throw ValidationError("n_utterances must be positive");
  if (!range_ok(words_per_utterance)) throw ValidationError("words_per_utterance range is empty");
  if (!range_ok(frames_per_word)) throw ValidationError("frames_per_word range is empty");
  if (!range_ok(tokens_per_word)) throw ValidationError("tokens_per_word range is empty");
  if (text_vocab_size < 2) throw ValidationError("text_vocab_size must be at least 2");
  if (speakers.empty()) throw ValidationError("at least one speaker is required");
  if (!(hop_s > 0.0)) throw ValidationError("hop_s must be positive");
  if (transition_kind == TransitionKind::Strong && words_per_utterance.first < 2)
    throw ValidationError("strong transitions need at least 2 words per utterance");
  if (fixed_intensity && !(*fixed_intensity >= 0.0 && *fixed_intensity <= 1.0))
    throw ValidationError("fixed_intensity outside [0,1]");
}

json spec_to_json(const CorpusSpec& s) {
  json j = {{"name", s.name},
            {"n_utterances", s.n_utterances},
            {"words_per_utterance", {s.words_per_utterance.first, s.words_per_utterance.second}},
            {"frames_per_word", {s.frames_per_word.first, s.frames_per_word.second}},
            {"tokens_per_word", {s.tokens_per_word.first, s.tokens_per_word.second}},
            {"transition_kind", transition_name(s.transition_kind)},
            {"seed", s.seed},
            {"text_vocab_size", s.text_vocab_size},
            {"speakers", s.speakers},
            {"hop_s", s.hop_s}};
  if (s.fixed_category) j["fixed_category"] = emotion_name(*s.fixed_category);
  if (s.fixed_intensity) j["fixed_intensity"] = *s.fixed_intensity;
  return j;
}

CorpusSpec spec_from_json(const json& j) {
  CorpusSpec s;
  auto range = [&](const char* key, std::pair<int, int>& r) {
    if (j.contains(key)) {
      const auto v = j.at(key).get<std::vector<int>>();
      if (v.size() != 2) throw ValidationError(std::string(key) + " must be [min, max]");
      r = {v[0], v[1]};
    }
  };
  s.name = j.value("name", s.name);
  s.n_utterances = j.value("n_utterances", s.n_utterances);
  range("words_per_utterance", s.words_per_utterance);
  range("frames_per_word", s.frames_per_word);
  range("tokens_per_word", s.tokens_per_word);
  if (j.contains("transition_kind")) s.transition_kind = transition_from_name(j["transition_kind"].get<std::string>());
  s.seed = j.value("seed", s.seed);
  s.text_vocab_size = j.value("text_vocab_size", s.text_vocab_size);
  s.speakers = j.value("speakers", s.speakers);
  s.hop_s = j.value("hop_s", s.hop_s);
  if (j.contains("fixed_category")) s.fixed_category = emotion_from_name(j["fixed_category"].get<std::string>());
  if (j.contains("fixed_intensity")) s.fixed_intensity = j["fixed_intensity"].get<double>();
  s.validate();
  return s;
}

Utterance synth_utterance(const CorpusSpec& spec, const EmotionBasis& basis, int index) {
  spec.validate();
  const auto C = static_cast<int>(basis.class_means.rows());
  const std::size_t D = basis.class_means.cols();
  std::mt19937_64 rng(derive_seed(spec.seed, "utterance/" + std::to_string(index)));
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto uniform_real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto non_neutral = [&]() {
    const int pick = uniform_int(0, C - 2);
    return pick >= basis.neutral_index ? pick + 1 : pick;
  };

  const int n_words = uniform_int(spec.words_per_utterance.first, spec.words_per_utterance.second);
  std::vector<WordEmotionAnnotation> gold(static_cast<std::size_t>(n_words));
  std::optional<std::size_t> boundary;
  switch (spec.transition_kind) {
    case TransitionKind::None: {
      const int c = spec.fixed_category ? code(*spec.fixed_category) : uniform_int(0, C - 1);
      const double s = c == basis.neutral_index ? 0.0
                       : spec.fixed_intensity ? *spec.fixed_intensity
                                              : uniform_real(0.5, 1.0);
      for (auto& g : gold) g = {emotion_from_code(c), s};
      break;
    }
    case TransitionKind::Mild: {
      const int c = non_neutral();
      for (int i = 0; i < n_words; ++i) {
        const double s = n_words == 1 ? 1.0 : std::min(1.0, 0.2 + 0.8 * static_cast<double>(i) / (n_words - 1));
        gold[static_cast<std::size_t>(i)] = {emotion_from_code(c), s};
      }
      break;
    }
    case TransitionKind::Strong: {
      // The switch sits after word k, chosen from the middle half of the utterance.
      const int lo = std::max(0, (n_words - 1) / 4);
      const int hi = std::max(lo, std::min(n_words - 2, n_words - 1 - n_words / 4));
      const int k = uniform_int(lo, hi);
      const int c1 = non_neutral();
      int c2 = non_neutral();
      while (c2 == c1) c2 = non_neutral();
      for (int i = 0; i < n_words; ++i) gold[static_cast<std::size_t>(i)] = {emotion_from_code(i <= k ? c1 : c2), 1.0};
      boundary = static_cast<std::size_t>(k);
      break;
    }
  }

  std::vector<int> frames_per_word(static_cast<std::size_t>(n_words));
  std::size_t total_frames = 0;
  for (auto& f : frames_per_word) {
    f = uniform_int(spec.frames_per_word.first, spec.frames_per_word.second);
    total_frames += static_cast<std::size_t>(f);
  }

  Utterance u;
  char id[32];
  std::snprintf(id, sizeof id, "%05d", index);
  u.utterance_id = spec.name + "-" + id;
  u.speaker_id = spec.speakers[static_cast<std::size_t>(index) % spec.speakers.size()];
  u.transition_kind = std::string(transition_name(spec.transition_kind));
  u.boundary_word = boundary;

  Matrix frames(total_frames, D);
  std::normal_distribution<double> noise(0.0, basis.noise_sigma);
  std::size_t offset = 0;
  for (int w = 0; w < n_words; ++w) {
    const auto& g = gold[static_cast<std::size_t>(w)];
    const auto c = static_cast<std::size_t>(code(g.category));
    const auto n = static_cast<std::size_t>(basis.neutral_index);
    const int n_tokens = uniform_int(spec.tokens_per_word.first, spec.tokens_per_word.second);
    std::string word;
    for (int t = 0; t < n_tokens; ++t) {
      const int tok = uniform_int(0, spec.text_vocab_size - 1);
      u.text_tokens.push_back(tok);
      u.word_of_token.push_back(w);
      word += (t ? "_t" : "t") + std::to_string(tok);
    }
    const auto nf = static_cast<std::size_t>(frames_per_word[static_cast<std::size_t>(w)]);
    for (std::size_t r = offset; r < offset + nf; ++r)
      for (std::size_t d = 0; d < D; ++d) {
        const double center = basis.class_means(n, d) + g.intensity * (basis.class_means(c, d) - basis.class_means(n, d));
        frames(r, d) = center + (basis.noise_sigma > 0.0 ? noise(rng) : 0.0);
      }
    u.words.push_back({word, static_cast<double>(offset) * spec.hop_s, static_cast<double>(offset + nf) * spec.hop_s});
    offset += nf;
  }
  u.features = EmotionFeatureSequence(spec.hop_s, std::move(frames));

  std::vector<int> speech(u.text_tokens.size());
  for (std::size_t t = 0; t < speech.size(); ++t)
    speech[t] = u.text_tokens[t] * C + code(gold[static_cast<std::size_t>(u.word_of_token[t])].category);
  u.speech_tokens = std::move(speech);

  std::vector<int> counts(static_cast<std::size_t>(C), 0);
  for (const auto& g : gold) ++counts[static_cast<std::size_t>(code(g.category))];
  u.global_label = emotion_from_code(static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
  u.annotations = std::move(gold);
  return u;
}

fs::path build_corpus(const CorpusSpec& spec, const EmotionBasis& basis, const fs::path& out_dir) {
  spec.validate();
  const int n = spec.n_utterances;
  std::vector<std::string> manifests(static_cast<std::size_t>(n));
  std::vector<std::string> ids(static_cast<std::size_t>(n));
  std::exception_ptr failure;

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir, "cannot create directory: " + ec.message());

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      const Utterance u = synth_utterance(spec, basis, i);
      const fs::path m = write_utterance(u, out_dir, u.utterance_id);
      manifests[static_cast<std::size_t>(i)] = m.filename().string();
      ids[static_cast<std::size_t>(i)] = u.utterance_id;
    } catch (...) {
#pragma omp critical(build_corpus_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Order by a per-utterance hash, then cut 80/10/10.
  std::vector<std::pair<std::uint64_t, int>> order;
  for (int i = 0; i < n; ++i) order.emplace_back(derive_seed(spec.seed, "split/" + ids[static_cast<std::size_t>(i)]), i);
  std::sort(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(n) * 8 / 10;
  const auto n_dev = static_cast<std::size_t>(n) / 10;
  json split = {{"train", json::array()}, {"dev", json::array()}, {"test", json::array()}};
  for (std::size_t r = 0; r < order.size(); ++r) {
    const char* name = r < n_train ? "train" : r < n_train + n_dev ? "dev" : "test";
    split[name].push_back(ids[static_cast<std::size_t>(order[r].second)]);
  }
  json kinds = json::object();
  for (const auto& id : ids) kinds[id] = transition_name(spec.transition_kind);

  const json index = {{"spec", json::array({spec_to_json(spec)})},
                      {"basis", basis_to_json(basis)},
                      {"utterances", manifests},
                      {"split", split},
                      {"transition_kind", kinds}};
  const fs::path index_path = out_dir / "index.json";
  write_json_file(index_path, index);
  return index_path;
}

fs::path merge_corpus_indices(const std::vector<fs::path>& parts, const fs::path& out_index) {
  json merged = {{"spec", json::array()},
                 {"utterances", json::array()},
                 {"split", {{"train", json::array()}, {"dev", json::array()}, {"test", json::array()}}},
                 {"transition_kind", json::object()}};
  const fs::path root = out_index.parent_path();
  for (const auto& part : parts) {
    const json idx = read_json_file(part);
    const fs::path rel = fs::relative(part.parent_path(), root.empty() ? fs::path(".") : root);
    for (const auto& s : idx.at("spec")) merged["spec"].push_back(s);
    if (!merged.contains("basis")) merged["basis"] = idx.at("basis");
    else if (merged["basis"] != idx.at("basis")) throw ValidationError("cannot merge corpora with different emotion bases");
    for (const auto& m : idx.at("utterances")) merged["utterances"].push_back((rel / m.get<std::string>()).generic_string());
    for (const char* s : {"train", "dev", "test"})
      for (const auto& id : idx.at("split").at(s)) merged["split"][s].push_back(id);
    for (const auto& [id, kind] : idx.at("transition_kind").items()) {
      if (merged["transition_kind"].contains(id)) throw ValidationError("duplicate utterance id " + id + " across corpus parts");
      merged["transition_kind"][id] = kind;
    }
  }
  write_json_file(out_index, merged);
  return out_index;
}

std::vector<const Utterance*> Corpus::split(const std::string& name) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances) {
    auto it = split_of.find(u.utterance_id);
    if (it != split_of.end() && it->second == name) out.push_back(&u);
  }
  return out;
}

std::optional<EmotionBasis> Corpus::basis() const {
  if (!index.contains("basis")) return std::nullopt;
  return basis_from_json(index["basis"]);
}

Corpus load_corpus(const fs::path& index_path) {
  Corpus c;
  c.index_path = index_path;
  c.index = read_json_file(index_path);
  const fs::path root = index_path.parent_path();
  for (const auto& m : c.index.at("utterances")) c.utterances.push_back(read_utterance(root / m.get<std::string>()));
  for (const auto& [name, ids] : c.index.at("split").items())
    for (const auto& id : ids) c.split_of[id.get<std::string>()] = name;
  return c;
}

}  // namespace emofilm
