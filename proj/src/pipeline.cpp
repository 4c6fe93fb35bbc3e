#include "emofilm/pipeline.hpp"

#include "emofilm/metrics.hpp"
#include "emofilm/params.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace emofilm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  auto part = [](const char* name, const char* kind, int n) {
    return json{{"name", name}, {"transition_kind", kind}, {"n_utterances", n}};
  };
  return {
      {"seed", 7},
      {"paths", {{"corpus_dir", "run/corpus"}, {"checkpoint_dir", "run/checkpoints"}, {"report_dir", "run/reports"}}},
      {"basis", {{"dim", 16}, {"noise_sigma", 1.0}, {"separation", 16.0}}},
      {"corpus", {{"parts", {part("mild", "mild", 500), part("strong", "strong", 500), part("steady", "none", 500)}}}},
      {"annotator",
       {{"model", annotator_config_to_json(AnnotatorConfig{})},
        {"train", {{"learning_rate", 1e-3}, {"batch_size", 4}, {"epochs", 3}}},
        {"loss", {{"lambda_cls", 1.0}, {"lambda_reg", 1.0}}}}},
      {"tts",
       {{"model", efilm_config_to_json(EFiLMConfig{})},
        {"train", {{"learning_rate", 1e-3}, {"batch_size", 4}, {"epochs", 12}}},
        {"loss", {{"epsilon", 0.1}, {"lambda_emo", 0.3}}},
        {"annotation_source", "gold_word_level"}}},
      {"synthesize", {{"mode", "greedy"}, {"max_len", 64}, {"annotations", "predicted"}, {"split", "test"}}},
      {"plot", {{"max_utterances", 6}}},
  };
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ValidationError("override '" + assignment + "' has an empty path component");
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw ValidationError("override '" + assignment + "': '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw ValidationError("override '" + assignment + "': index out of range");
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();  // missing section
      if (!node->is_object()) throw ValidationError("override '" + assignment + "' descends into a scalar");
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

std::string config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename T>
T required(const json& j, const char* key, const char* where) {
  if (!j.contains(key)) throw ValidationError(std::string(where) + "." + key + " is required");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(where) + "." + key + ": " + e.what());
  }
}

json section(const json& j, const char* key) { return j.contains(key) ? j.at(key) : json::object(); }

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  try {
    c.seed = required<std::uint64_t>(j, "seed", "config");
    const json paths = section(j, "paths");
    c.corpus_dir = resolve(base_dir, required<std::string>(paths, "corpus_dir", "paths"));
    c.checkpoint_dir = resolve(base_dir, required<std::string>(paths, "checkpoint_dir", "paths"));
    c.report_dir = resolve(base_dir, required<std::string>(paths, "report_dir", "paths"));

    const json basis = section(j, "basis");
    c.feature_dim = basis.value("dim", c.feature_dim);
    c.noise_sigma = basis.value("noise_sigma", c.noise_sigma);
    c.separation = basis.value("separation", c.separation);
    if (c.feature_dim < 2) throw ValidationError("basis.dim must be at least 2");
    if (!(c.noise_sigma > 0.0)) throw ValidationError("basis.noise_sigma must be positive");
    if (!(c.separation >= 4.0)) throw ValidationError("basis.separation must be at least 4");

    const json parts = section(j, "corpus").value("parts", json::array());
    if (!parts.is_array() || parts.empty()) throw ValidationError("corpus.parts must be a non-empty array");
    std::map<std::string, int> names;
    for (const auto& p : parts) {
      if (p.contains("seed")) throw ValidationError("corpus part seeds derive from the run seed; remove 'seed'");
      CorpusSpec s = spec_from_json(p);
      if (names[s.name]++) throw ValidationError("duplicate corpus part name '" + s.name + "'");
      s.seed = derive_seed(c.seed, "corpus/" + s.name);
      c.parts.push_back(std::move(s));
    }

    const json ann = section(j, "annotator");
    c.annotator_model = annotator_config_from_json(section(ann, "model"));
    c.annotator_train = train_config_from_json(section(ann, "train"));
    c.annotator_train.seed = derive_seed(c.seed, "annotator");
    const json aloss = section(ann, "loss");
    c.annotator_loss.lambda_cls = aloss.value("lambda_cls", c.annotator_loss.lambda_cls);
    c.annotator_loss.lambda_reg = aloss.value("lambda_reg", c.annotator_loss.lambda_reg);
    c.annotator_loss.validate();
    if (c.annotator_model.input_dim != c.feature_dim)
      throw ValidationError("annotator.model.input_dim must equal basis.dim");

    const json tts = section(j, "tts");
    json tts_model = section(tts, "model");
    if (tts.contains("variant")) tts_model["variant"] = tts["variant"];
    c.tts_model = efilm_config_from_json(tts_model);
    c.tts_train = train_config_from_json(section(tts, "train"));
    c.tts_train.seed = derive_seed(c.seed, "tts");
    const json gloss = section(tts, "loss");
    c.tts_loss.epsilon = gloss.value("epsilon", c.tts_loss.epsilon);
    c.tts_loss.lambda_emo = gloss.value("lambda_emo", c.tts_loss.lambda_emo);
    c.tts_loss.validate();
    c.annotation_source = annotation_source_from_name(tts.value("annotation_source", "gold_word_level"));
    for (const auto& p : c.parts)
      if (p.text_vocab_size != c.tts_model.text_vocab)
        throw ValidationError("corpus part '" + p.name + "' text_vocab_size differs from tts.model.text_vocab");

    const json syn = section(j, "synthesize");
    c.synth_mode = syn.value("mode", c.synth_mode);
    if (c.synth_mode != "greedy" && c.synth_mode != "sampled" && c.synth_mode != "oracle")
      throw ValidationError("synthesize.mode must be greedy, sampled or oracle");
    c.max_len = syn.value("max_len", c.max_len);
    if (c.max_len < 1) throw ValidationError("synthesize.max_len must be at least 1");
    c.synth_annotations = syn.value("annotations", c.synth_annotations);
    if (c.synth_annotations != "gold" && c.synth_annotations != "predicted")
      throw ValidationError("synthesize.annotations must be gold or predicted");
    c.synth_split = syn.value("split", c.synth_split);
    if (c.synth_split != "train" && c.synth_split != "dev" && c.synth_split != "test")
      throw ValidationError("synthesize.split must be train, dev or test");
    c.plot_limit = section(j, "plot").value("max_utterances", c.plot_limit);
    if (c.plot_limit < 0) throw ValidationError("plot.max_utterances must be non-negative");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

namespace {

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  write_text_file(path, text);
}

Corpus require_corpus(const PipelineConfig& c) {
  if (!fs::exists(c.corpus_index()))
    throw ValidationError("no corpus at " + c.corpus_index().string() + "; run gen-data first");
  return load_corpus(c.corpus_index());
}

json require_json(const fs::path& path, const char* produced_by) {
  if (!fs::exists(path)) throw ValidationError(path.string() + " does not exist; run " + produced_by + " first");
  return read_json_file(path);
}

std::map<std::string, std::vector<WordEmotionAnnotation>> load_annotations(const PipelineConfig& c) {
  const json j = require_json(c.annotations_file(), "annotate");
  std::map<std::string, std::vector<WordEmotionAnnotation>> out;
  for (const auto& [id, anns] : j.at("annotations").items()) out[id] = annotations_from_json(anns);
  return out;
}

Matrix one_hot_labels(std::span<const int> labels, int categories) {
  Matrix m(labels.size(), static_cast<std::size_t>(categories));
  for (std::size_t t = 0; t < labels.size(); ++t) m(t, static_cast<std::size_t>(labels[t])) = 1.0;
  return m;
}

std::size_t row_argmax(std::span<const double> r) {
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

// Word category from the mean posterior over the word's steps; words past the
// end of a short generation reuse the last generated step.
std::vector<Emotion> word_categories_from(const Matrix& posteriors, const TtsExample& ex, std::size_t n_words) {
  std::vector<Emotion> out;
  for (std::size_t w = 0; w < n_words; ++w) {
    std::vector<double> mean(posteriors.cols(), 0.0);
    std::size_t n = 0;
    for (std::size_t t = 0; t < ex.memory_words.size() && t < posteriors.rows(); ++t)
      if (static_cast<std::size_t>(ex.memory_words[t]) == w) {
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += posteriors(t, k);
        ++n;
      }
    if (n == 0)
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] = posteriors(posteriors.rows() - 1, k);
    out.push_back(emotion_from_code(static_cast<int>(row_argmax(mean))));
  }
  return out;
}

}  // namespace

Produced gen_data(const PipelineConfig& c, std::ostream& log) {
  const EmotionBasis basis =
      make_emotion_basis(kNumEmotions, c.feature_dim, derive_seed(c.seed, "basis"), c.noise_sigma, c.separation);
  std::vector<fs::path> indices;
  Produced produced;
  for (const auto& part : c.parts) {
    const fs::path dir = c.corpus_dir / "parts" / part.name;
    if (fs::exists(dir)) fs::remove_all(dir);
    indices.push_back(build_corpus(part, basis, dir));
    log << "gen-data: part '" << part.name << "' (" << transition_name(part.transition_kind) << ", "
        << part.n_utterances << " utterances)\n";
    Produced files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    produced.insert(produced.end(), files.begin(), files.end());
  }
  produced.push_back(merge_corpus_indices(indices, c.corpus_index()));
  return produced;
}

Produced train_annotator_step(const PipelineConfig& c, std::ostream& log) {
  const Corpus corpus = require_corpus(c);
  auto result = train_annotator(corpus, c.annotator_model, c.annotator_train, c.annotator_loss);
  for (const auto& r : result.log) log << "train-annotator: " << r.dump() << "\n";
  const json extra = {{"train", train_config_to_json(c.annotator_train)},
                      {"loss", {{"lambda_cls", c.annotator_loss.lambda_cls}, {"lambda_reg", c.annotator_loss.lambda_reg}}},
                      {"best_epoch", result.best_epoch}};
  write_json_file(c.annotator_checkpoint(), result.model.to_checkpoint(extra));
  const fs::path log_path = c.checkpoint_dir / "annotator.log.jsonl";
  write_jsonl(log_path, result.log);
  return {c.annotator_checkpoint(), log_path};
}

Produced annotate_step(const PipelineConfig& c, std::ostream& log) {
  const Corpus corpus = require_corpus(c);
  const AnnotatorModel model = AnnotatorModel::from_checkpoint(require_json(c.annotator_checkpoint(), "train-annotator"));
  json anns = json::object();
  for (const auto& u : corpus.utterances) anns[u.utterance_id] = annotations_to_json(annotate(model, u));
  const auto test = corpus.split("test");
  const AnnotatorEval ev = evaluate_annotator(model, test, c.annotator_loss);
  log << "annotate: " << corpus.utterances.size() << " utterances; test accuracy " << ev.accuracy
      << ", intensity MAE " << ev.intensity_mae << "\n";
  const json out = {{"annotations", anns},
                    {"test", {{"accuracy", ev.accuracy}, {"intensity_mae", ev.intensity_mae}, {"words", ev.words}}}};
  write_json_file(c.annotations_file(), out);
  return {c.annotations_file()};
}

Produced train_tts_step(const PipelineConfig& c, std::ostream& log) {
  const Corpus corpus = require_corpus(c);
  auto result = train_efilm(corpus, c.tts_model, c.tts_train, c.tts_loss, c.annotation_source);
  for (const auto& r : result.log) log << "train-tts: " << r.dump() << "\n";
  const json extra = {{"train", train_config_to_json(c.tts_train)},
                      {"loss", {{"epsilon", c.tts_loss.epsilon}, {"lambda_emo", c.tts_loss.lambda_emo}}},
                      {"annotation_source", annotation_source_name(c.annotation_source)},
                      {"best_epoch", result.best_epoch}};
  write_json_file(c.efilm_checkpoint(), result.model.to_checkpoint(extra));
  const fs::path log_path = c.checkpoint_dir / "efilm.log.jsonl";
  write_jsonl(log_path, result.log);
  return {c.efilm_checkpoint(), log_path};
}

Produced synthesize_step(const PipelineConfig& c, std::ostream& log) {
  const Corpus corpus = require_corpus(c);
  const auto utts = corpus.split(c.synth_split);
  if (utts.empty()) throw ValidationError("split '" + c.synth_split + "' is empty");

  json gens = json::object();
  if (c.synth_mode == "oracle") {
    // Reference output: gold tokens and one-hot gold step labels.
    for (const Utterance* u : utts) {
      const TtsExample ex = make_tts_example(*u, AnnotationSource::GoldWordLevel, c.tts_model);
      Generation g;
      g.tokens = ex.targets;
      g.posteriors = one_hot_labels(ex.emotion_labels, c.tts_model.categories);
      gens[u->utterance_id] = g.to_json();
      gens[u->utterance_id]["mode"] = "oracle";
    }
  } else {
    const EFiLMModel model = EFiLMModel::from_checkpoint(require_json(c.efilm_checkpoint(), "train-tts"));
    std::map<std::string, std::vector<WordEmotionAnnotation>> predicted;
    if (c.synth_annotations == "predicted") predicted = load_annotations(c);
    for (const Utterance* u : utts) {
      const std::vector<WordEmotionAnnotation>* cond = nullptr;
      if (c.synth_annotations == "predicted") {
        auto it = predicted.find(u->utterance_id);
        if (it == predicted.end()) throw ValidationError("no predicted annotations for " + u->utterance_id);
        cond = &it->second;
      }
      const TtsExample ex = make_tts_example(*u, c.annotation_source, model.config(), cond);
      GenerationMode mode;
      mode.sampled = c.synth_mode == "sampled";
      mode.seed = derive_seed(c.seed, "sample/" + u->utterance_id);
      gens[u->utterance_id] = generate(model, ex, c.max_len, mode).to_json();
    }
  }
  log << "synthesize: " << utts.size() << " utterances (" << c.synth_split << ", " << c.synth_mode << ")\n";
  write_json_file(c.generations_file(),
                  {{"split", c.synth_split}, {"mode", c.synth_mode}, {"annotations", c.synth_annotations},
                   {"generations", gens}});
  return {c.generations_file()};
}

Produced evaluate_step(const PipelineConfig& c, std::ostream& log) {
  const Corpus corpus = require_corpus(c);
  const json gj = require_json(c.generations_file(), "synthesize");
  const json& gens = gj.at("generations");
  const std::string split = gj.value("split", c.synth_split);
  const auto utts = corpus.split(split);

  std::vector<UtteranceEval> generated, gold;
  json per_utt = json::array();
  double gen_acc = 0.0;
  std::size_t strong = 0, localized = 0;
  for (const auto& [id, g] : gens.items()) {
    if (!corpus.split_of.count(id)) throw ValidationError("generated utterance " + id + " is not in the corpus");
  }
  for (const Utterance* u : utts) {
    const TtsExample ex = make_tts_example(*u, AnnotationSource::GoldWordLevel, c.tts_model);
    std::vector<Emotion> gold_words;
    for (const auto& a : ex.annotations) gold_words.push_back(a.category);
    gold.push_back({u->utterance_id, {one_hot_labels(ex.emotion_labels, c.tts_model.categories), "posterior"}, gold_words});
    if (!gens.contains(u->utterance_id)) continue;  // reported as missing by evaluate_corpus
    const Generation g = Generation::from_json(gens.at(u->utterance_id));
    if (g.posteriors.rows() == 0) throw ValidationError("generation for " + u->utterance_id + " is empty");
    generated.push_back({u->utterance_id, {g.posteriors, "posterior"},
                         word_categories_from(g.posteriors, ex, u->words.size())});
    const double acc = generation_accuracy(g, ex);
    gen_acc += acc;
    json rec = {{"utterance_id", u->utterance_id},
                {"transition_kind", u->transition_kind},
                {"dtw", dtw(generated.back().trajectory, gold.back().trajectory)},
                {"emo_sim", emo_sim(generated.back().trajectory, gold.back().trajectory)},
                {"token_accuracy", acc}};
    if (ex.boundary_step) {
      ++strong;
      const bool ok = switches_once_near(g.posteriors, *ex.boundary_step);
      localized += ok;
      rec["transition_localized"] = ok;
    }
    per_utt.push_back(rec);
  }
  const MetricReport report = evaluate_corpus(generated, gold);
  json out = report.to_json();
  out["split"] = split;
  out["generation_mode"] = gj.value("mode", "");
  out["token_accuracy"] = gen_acc / static_cast<double>(generated.size());
  out["strong_transition"] = {{"utterances", strong},
                              {"localized_fraction", strong ? static_cast<double>(localized) / strong : 0.0}};
  out["per_utterance"] = per_utt;
  write_json_file(c.report_file(), out);
  log << std::setprecision(6) << "evaluate: emo_sim " << report.emo_sim_percent << "%, dtw " << report.dtw_cost
      << ", word accuracy " << report.overall_accuracy << ", token accuracy " << out["token_accuracy"].get<double>()
      << "\n";
  return {c.report_file()};
}

std::string trajectory_svg(const std::string& title, const Matrix& gold, const Matrix& generated) {
  static const char* colors[] = {"#d62728", "#ff7f0e", "#1f77b4", "#9467bd", "#7f7f7f"};
  const double w = 640, h = 260, left = 50, right = 130, top = 30, bottom = 30;
  const double pw = w - left - right, ph = h - top - bottom;
  const std::size_t steps = std::max<std::size_t>(2, std::max(gold.rows(), generated.rows()));
  auto x = [&](std::size_t t) { return left + pw * static_cast<double>(t) / static_cast<double>(steps - 1); };
  auto y = [&](double p) { return top + ph * (1.0 - p); };

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (double p : {0.0, 0.5, 1.0})
    s << "<text x=\"" << left - 6 << "\" y=\"" << y(p) + 4 << "\" text-anchor=\"end\">" << p << "</text>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">decoder step</text>\n";
  auto polyline = [&](const Matrix& m, std::size_t k, bool dashed) {
    if (m.rows() == 0) return;
    s << "<polyline fill=\"none\" stroke=\"" << colors[k % 5] << "\" stroke-width=\"" << (dashed ? 1.5 : 2.0) << "\"";
    if (dashed) s << " stroke-dasharray=\"5,3\"";
    s << " points=\"";
    for (std::size_t t = 0; t < m.rows(); ++t) s << x(t) << "," << y(m(t, k)) << (t + 1 < m.rows() ? " " : "");
    s << "\"/>\n";
  };
  const std::size_t K = std::max(gold.cols(), generated.cols());
  for (std::size_t k = 0; k < K; ++k) {
    if (k < gold.cols()) polyline(gold, k, true);
    if (k < generated.cols()) polyline(generated, k, false);
    const double ly = top + 14.0 * static_cast<double>(k) + 8;
    s << "<line x1=\"" << w - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - right + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << colors[k % 5] << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << w - right + 35 << "\" y=\"" << ly + 4 << "\">"
      << (k < static_cast<std::size_t>(kNumEmotions) ? emotion_name(emotion_from_code(static_cast<int>(k))) : "?")
      << "</text>\n";
  }
  s << "<text x=\"" << w - right + 10 << "\" y=\"" << top + 14.0 * static_cast<double>(K) + 16
    << "\">dashed: gold</text>\n";
  s << "</svg>\n";
  return s.str();
}

Produced plot_step(const PipelineConfig& c, std::ostream& log) {
  const Corpus corpus = require_corpus(c);
  const json gj = require_json(c.generations_file(), "synthesize");
  const json& gens = gj.at("generations");
  const auto utts = corpus.split(gj.value("split", c.synth_split));

  // Strong-transition utterances first: they show the most structure.
  std::vector<const Utterance*> chosen;
  for (const Utterance* u : utts)
    if (u->boundary_word && gens.contains(u->utterance_id)) chosen.push_back(u);
  for (const Utterance* u : utts)
    if (!u->boundary_word && gens.contains(u->utterance_id)) chosen.push_back(u);
  if (chosen.size() > static_cast<std::size_t>(c.plot_limit)) chosen.resize(static_cast<std::size_t>(c.plot_limit));

  const fs::path dir = c.report_dir / "plots";
  if (fs::exists(dir)) fs::remove_all(dir);
  Produced produced;
  for (const Utterance* u : chosen) {
    const TtsExample ex = make_tts_example(*u, AnnotationSource::GoldWordLevel, c.tts_model);
    const Generation g = Generation::from_json(gens.at(u->utterance_id));
    const fs::path out = dir / (u->utterance_id + ".svg");
    write_text_file(out, trajectory_svg(u->utterance_id + " (" + u->transition_kind + ")",
                                        one_hot_labels(ex.emotion_labels, c.tts_model.categories), g.posteriors));
    produced.push_back(out);
  }
  log << "plot: " << produced.size() << " trajectory plots in " << dir.string() << "\n";
  return produced;
}

void describe_checkpoint(const fs::path& path, std::ostream& out) {
  const json ckpt = read_json_file(path);
  if (!ckpt.is_object() || !ckpt.contains("kind")) throw ValidationError(path.string() + " is not a checkpoint");
  const std::string kind = ckpt.at("kind").get<std::string>();
  auto summarize = [&](const ParameterSet& ps, std::initializer_list<const char*> heads) {
    out << "checkpoint: " << path.string() << "\n";
    out << "kind: " << kind << "\n";
    out << "schema_version: " << ckpt.at("schema_version").get<int>() << "\n";
    out << "seed: " << ckpt.at("seed").get<std::uint64_t>() << "\n";
    out << "config: " << ckpt.at("config").dump(2) << "\n";
    out << "parameters: " << ps.count() << "\n";
    for (const auto& [group, n] : ps.group_counts()) out << "  " << group << ": " << n << "\n";
    out << "heads:\n";
    for (const char* h : heads) {
      const std::string w = std::string(h) + ".w";
      out << "  " << h << ": weight " << ps.get(w).value().shape_str() << ", bias "
          << ps.get(std::string(h) + ".b").value().shape_str() << "\n";
    }
  };
  if (kind == "annotator") {
    const AnnotatorModel m = AnnotatorModel::from_checkpoint(ckpt);
    summarize(m.params(), {"cls_head", "reg_head"});
  } else if (kind == "efilm") {
    const EFiLMModel m = EFiLMModel::from_checkpoint(ckpt);
    summarize(m.params(), {"speech_head", "emotion_head"});
  } else {
    throw IncompatibleCheckpoint("unknown checkpoint kind '" + kind + "'");
  }
}

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

PipelineConfig load_pipeline_config(const CommonOptions& o, json& effective) {
  std::string path = o.config_path;
  if (path.empty())
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) path = env;
  fs::path base = fs::current_path();
  if (!path.empty()) {
    if (!fs::exists(path)) throw ValidationError("config file " + path + " does not exist");
    effective = read_json_file(path);
    base = fs::absolute(path).parent_path();
  } else {
    effective = default_config();
  }
  for (const auto& a : o.overrides) apply_override(effective, a);
  if (o.seed) effective["seed"] = *o.seed;
  return PipelineConfig::from_json(effective, base);
}

void write_manifest(const PipelineConfig& c, const std::string& command, const json& effective,
                    const Produced& produced) {
  json files = json::array();
  for (const auto& p : produced) files.push_back(fs::relative(fs::absolute(p), c.base_dir).generic_string());
  const json manifest = {
      {"command", command}, {"config_hash", config_hash(effective)}, {"seed", c.seed}, {"produced_files", files}};
  write_json_file(c.report_dir / "manifests" / (command + ".json"), manifest);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Word-level emotion annotation and FiLM-modulated speech-token generation"};
  app.name("emofilm");
  app.require_subcommand(1);

  using Step = Produced (*)(const PipelineConfig&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Step>> steps = {
      {"gen-data", "Generate the synthetic corpus", gen_data},
      {"train-annotator", "Train the word-level emotion annotator", train_annotator_step},
      {"annotate", "Annotate every corpus utterance with the trained annotator", annotate_step},
      {"train-tts", "Train the emotion-modulated generator", train_tts_step},
      {"synthesize", "Generate speech tokens and emotion posteriors for a split", synthesize_step},
      {"evaluate", "Score generations against gold trajectories", evaluate_step},
      {"plot", "Write gold vs generated trajectory plots (SVG)", plot_step},
  };

  CommonOptions opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opts.config_path, "JSON config file (default: $EMOFILM_CONFIG or built-in)");
    sub->add_option("--set", opts.overrides, "Override a config value: dotted.path=value")->take_all();
    sub->add_option("--seed", opts.seed, "Run seed (overrides config)");
  };
  std::vector<std::pair<CLI::App*, Step>> step_cmds;
  for (const auto& [name, help, fn] : steps) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    step_cmds.emplace_back(sub, fn);
  }
  CLI::App* pipeline = app.add_subcommand("pipeline", "Run every step from gen-data to plot");
  add_common(pipeline);
  CLI::App* describe = app.add_subcommand("describe", "Summarize a checkpoint");
  std::string checkpoint;
  describe->add_option("checkpoint", checkpoint, "Checkpoint JSON file")->required();
  CLI::App* show = app.add_subcommand("show-config", "Print the effective config");
  add_common(show);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidationFailure;
  }

  try {
    if (describe->parsed()) {
      describe_checkpoint(checkpoint, out);
      return kOk;
    }
    json effective;
    const PipelineConfig config = load_pipeline_config(opts, effective);
    if (show->parsed()) {
      out << effective.dump(2) << "\n";
      return kOk;
    }
    Produced produced;
    std::string command;
    if (pipeline->parsed()) {
      command = "pipeline";
      for (const auto& [sub, fn] : step_cmds) {
        const Produced p = fn(config, out);
        produced.insert(produced.end(), p.begin(), p.end());
      }
    } else {
      for (const auto& [sub, fn] : step_cmds)
        if (sub->parsed()) {
          command = sub->get_name();
          produced = fn(config, out);
        }
    }
    write_manifest(config, command, effective, produced);
    return kOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const IncompatibleCheckpoint& e) {
    err << "incompatible checkpoint: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const DegenerateSpanError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace emofilm::cli
