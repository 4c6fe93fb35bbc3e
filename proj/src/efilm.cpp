#include "emofilm/efilm.hpp"

#include "emofilm/annotator.hpp"
#include "emofilm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace emofilm {

using nlohmann::json;

std::string_view variant_name(ModulationVariant v) {
  switch (v) {
    case ModulationVariant::Film: return "film";
    case ModulationVariant::Addition: return "addition";
    case ModulationVariant::None: return "none";
  }
  return "film";
}

ModulationVariant variant_from_name(std::string_view name) {
  if (name == "film") return ModulationVariant::Film;
  if (name == "addition") return ModulationVariant::Addition;
  if (name == "none") return ModulationVariant::None;
  throw ValidationError("unknown modulation variant '" + std::string(name) + "'");
}

std::string_view annotation_source_name(AnnotationSource s) {
  switch (s) {
    case AnnotationSource::GoldWordLevel: return "gold_word_level";
    case AnnotationSource::GlobalOnly: return "global_only";
    case AnnotationSource::None: return "none";
  }
  return "gold_word_level";
}

AnnotationSource annotation_source_from_name(std::string_view name) {
  if (name == "gold_word_level") return AnnotationSource::GoldWordLevel;
  if (name == "global_only") return AnnotationSource::GlobalOnly;
  if (name == "none") return AnnotationSource::None;
  throw ValidationError("unknown annotation source '" + std::string(name) + "'");
}

void EFiLMConfig::validate() const {
  if (text_vocab < 2) throw ValidationError("text_vocab must be at least 2");
  if (categories != kNumEmotions) throw ValidationError("generator needs 5 emotion categories");
  if (embed < 1 || emotion_dim < 1 || heads < 1 || ff < 1 || decoder_layers < 1)
    throw ValidationError("generator dimensions must be positive");
  if (embed % heads != 0) throw ValidationError("embed width must be divisible by heads");
}

json efilm_config_to_json(const EFiLMConfig& c) {
  return {{"text_vocab", c.text_vocab}, {"categories", c.categories},         {"embed", c.embed},
          {"emotion_dim", c.emotion_dim}, {"heads", c.heads},                 {"ff", c.ff},
          {"decoder_layers", c.decoder_layers}, {"variant", variant_name(c.variant)}};
}

EFiLMConfig efilm_config_from_json(const json& j) {
  EFiLMConfig c;
  c.text_vocab = j.value("text_vocab", c.text_vocab);
  c.categories = j.value("categories", c.categories);
  c.embed = j.value("embed", c.embed);
  c.emotion_dim = j.value("emotion_dim", c.emotion_dim);
  c.heads = j.value("heads", c.heads);
  c.ff = j.value("ff", c.ff);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  if (j.contains("variant")) c.variant = variant_from_name(j["variant"].get<std::string>());
  c.validate();
  return c;
}

void GenLossConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("label smoothing epsilon must lie in [0,1)");
  if (!(lambda_emo >= 0.0)) throw ValidationError("lambda_emo must be non-negative");
}

std::size_t TtsBatch::total_tokens() const {
  std::size_t m = 0;
  for (const auto& t : speech_targets) m += t.size();
  return m;
}

std::size_t TtsBatch::total_steps() const {
  std::size_t n = 0;
  for (const auto& t : emotion_labels) n += t.size();
  return n;
}

ag::Var tts_loss(std::span<const ag::Var> logits, const TtsBatch& batch, double epsilon) {
  if (batch.total_tokens() == 0) throw ValidationError("tts_loss: batch has no target tokens (M = 0)");
  if (batch.vocab > 0)
    for (const auto& l : logits)
      if (l.cols() != static_cast<std::size_t>(batch.vocab))
        throw ValidationError("tts_loss: logits width differs from batch vocabulary");
  return ag::smoothed_cross_entropy(logits, batch.speech_targets, epsilon);
}

double tts_loss(std::span<const Matrix> logits, const TtsBatch& batch, double epsilon) {
  std::vector<ag::Var> vars;
  for (const auto& l : logits) vars.push_back(ag::constant(l));
  return tts_loss(vars, batch, epsilon).scalar();
}

ag::Var emo_loss(std::span<const ag::Var> step_logits, const TtsBatch& batch) {
  if (batch.total_steps() == 0) throw ValidationError("emo_loss: batch has no labelled steps (N = 0)");
  return ag::cross_entropy(step_logits, batch.emotion_labels);
}

double emo_loss(std::span<const Matrix> step_logits, const TtsBatch& batch) {
  std::vector<ag::Var> vars;
  for (const auto& l : step_logits) vars.push_back(ag::constant(l));
  return emo_loss(vars, batch).scalar();
}

ag::Var total_loss(const ag::Var& l_tts, const ag::Var& l_emo, const GenLossConfig& cfg) {
  return ag::add(l_tts, ag::scale(l_emo, cfg.lambda_emo));
}

double total_loss(double l_tts, double l_emo, const GenLossConfig& cfg) { return l_tts + cfg.lambda_emo * l_emo; }

Matrix apply_film(const Matrix& h, const Matrix& gamma, const Matrix& beta) {
  if (gamma.cols() != h.cols() || beta.cols() != h.cols() || !gamma.same_shape(beta) ||
      (gamma.rows() != 1 && gamma.rows() != h.rows()))
    throw ValidationError("apply_film: shape mismatch");
  Matrix out(h.rows(), h.cols());
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const std::size_t pr = gamma.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < h.cols(); ++c) out(r, c) = gamma(pr, c) * h(r, c) + beta(pr, c);
  }
  return out;
}

TtsExample make_tts_example(const Utterance& u, AnnotationSource source, const EFiLMConfig& cfg,
                            const std::vector<WordEmotionAnnotation>* conditioning) {
  if (u.text_tokens.empty()) throw ValidationError("utterance " + u.utterance_id + " has no text tokens");
  if (u.word_of_token.size() != u.text_tokens.size())
    throw ValidationError("utterance " + u.utterance_id + ": word_of_token length mismatch");
  if (!u.speech_tokens) throw ValidationError("utterance " + u.utterance_id + " has no speech tokens");
  if (u.speech_tokens->size() != u.text_tokens.size())
    throw ValidationError("utterance " + u.utterance_id + ": speech/text token length mismatch");

  TtsExample ex;
  ex.utterance_id = u.utterance_id;
  for (int t : u.text_tokens)
    if (t < 0 || t >= cfg.text_vocab) throw ValidationError("text token " + std::to_string(t) + " outside vocabulary");
  ex.memory_tokens = u.text_tokens;
  ex.memory_tokens.push_back(cfg.text_end());
  ex.memory_words = u.word_of_token;
  ex.memory_words.push_back(u.word_of_token.back());

  const std::vector<WordEmotionAnnotation>* word_level = conditioning ? conditioning : (u.annotations ? &*u.annotations : nullptr);
  switch (source) {
    case AnnotationSource::GoldWordLevel:
      if (!word_level) throw ValidationError("utterance " + u.utterance_id + " has no word-level annotations");
      ex.annotations = *word_level;
      break;
    case AnnotationSource::GlobalOnly: {
      Emotion label = Emotion::Neutral;
      if (word_level) {
        std::vector<int> counts(kNumEmotions, 0);
        for (const auto& a : *word_level) ++counts[static_cast<std::size_t>(code(a.category))];
        label = emotion_from_code(static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
      } else if (u.global_label) {
        label = *u.global_label;
      } else {
        throw ValidationError("utterance " + u.utterance_id + " has neither a global label nor annotations");
      }
      ex.annotations.assign(u.words.size(), {label, 1.0});
      break;
    }
    case AnnotationSource::None:
      ex.emotion_present = false;
      if (word_level) ex.annotations = *word_level;
      else if (u.global_label) ex.annotations.assign(u.words.size(), {*u.global_label, 1.0});
      else throw ValidationError("utterance " + u.utterance_id + " has no labels for the emotion loss");
      break;
  }
  if (ex.annotations.size() != u.words.size())
    throw ValidationError("utterance " + u.utterance_id + ": annotation count mismatch");

  ex.targets = *u.speech_tokens;
  for (int s : ex.targets)
    if (s < 0 || s >= cfg.speech_vocab()) throw ValidationError("speech token " + std::to_string(s) + " outside vocabulary");
  ex.targets.push_back(cfg.eos());
  for (int w : ex.memory_words) ex.emotion_labels.push_back(code(ex.annotations.at(static_cast<std::size_t>(w)).category));

  if (u.boundary_word) {
    for (std::size_t t = 0; t < u.word_of_token.size(); ++t)
      if (static_cast<std::size_t>(u.word_of_token[t]) > *u.boundary_word) {
        ex.boundary_step = t;
        break;
      }
  }
  return ex;
}

EFiLMModel::EFiLMModel(EFiLMConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const auto e = static_cast<std::size_t>(cfg_.embed);
  const auto ee = static_cast<std::size_t>(cfg_.emotion_dim);
  const auto v = static_cast<std::size_t>(cfg_.speech_vocab());
  params_.add("text_embedding", init_normal(static_cast<std::size_t>(cfg_.text_vocab) + 1, e, 1.0, seed_, "text_embedding"));
  params_.add("emotion.category", init_normal(static_cast<std::size_t>(cfg_.categories), ee, 1.0, seed_, "emotion.category"));
  params_.add("emotion.intensity", init_normal(1, ee, 1.0, seed_, "emotion.intensity"));
  nn::add_linear(params_, "fuse", e + ee, e, seed_);
  if (cfg_.variant == ModulationVariant::Film) nn::add_linear(params_, "film", e, 2 * e, seed_, /*zero=*/true);
  if (cfg_.variant == ModulationVariant::Addition) nn::add_linear(params_, "add", e, e, seed_);
  params_.add("speech_embedding", init_normal(v + 2, e, 1.0, seed_, "speech_embedding"));
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string p = "decoder" + std::to_string(l);
    nn::add_layer_norm(params_, p + ".ln_self", e);
    nn::add_attention(params_, p + ".self_attn", e, seed_);
    nn::add_layer_norm(params_, p + ".ln_cross", e);
    nn::add_attention(params_, p + ".cross_attn", e, seed_);
    nn::add_layer_norm(params_, p + ".ln_ff", e);
    nn::add_feed_forward(params_, p + ".ff", e, static_cast<std::size_t>(cfg_.ff), seed_);
  }
  nn::add_layer_norm(params_, "decoder_ln", e);
  nn::add_linear(params_, "speech_head", e, v + 1, seed_);
  nn::add_linear(params_, "emotion_head", e, static_cast<std::size_t>(cfg_.categories), seed_);
}

ag::Var EFiLMModel::text_states(std::span<const int> memory_tokens) const {
  const ag::Var emb = ag::embedding(params_.get("text_embedding"), memory_tokens);
  return ag::add(emb, ag::constant(sinusoidal_positions(memory_tokens.size(), static_cast<std::size_t>(cfg_.embed))));
}

ag::Var EFiLMModel::encode_emotion(std::span<const WordEmotionAnnotation> annotations,
                                   std::span<const int> word_of_row) const {
  std::vector<int> cats;
  Matrix intensity(word_of_row.size(), 1);
  for (std::size_t r = 0; r < word_of_row.size(); ++r) {
    const int w = word_of_row[r];
    if (w < 0 || static_cast<std::size_t>(w) >= annotations.size())
      throw ValidationError("encode_emotion: token " + std::to_string(r) + " is not mapped to an annotated word");
    cats.push_back(code(annotations[static_cast<std::size_t>(w)].category));
    intensity(r, 0) = annotations[static_cast<std::size_t>(w)].intensity;
  }
  return ag::add(ag::embedding(params_.get("emotion.category"), cats),
                 ag::matmul(ag::constant(std::move(intensity)), params_.get("emotion.intensity")));
}

ag::Var EFiLMModel::fuse(const ag::Var& h_text, const ag::Var& emotion) const {
  return nn::apply_linear(params_, "fuse", ag::concat_cols(h_text, emotion));
}

ag::Var EFiLMModel::modulate(const ag::Var& h_text, const ag::Var& fused) const {
  switch (cfg_.variant) {
    case ModulationVariant::Film: return ag::film(h_text, nn::apply_linear(params_, "film", fused));
    case ModulationVariant::Addition: return ag::add(h_text, nn::apply_linear(params_, "add", fused));
    case ModulationVariant::None: return h_text;
  }
  return h_text;
}

ag::Var EFiLMModel::memory(const TtsExample& ex) const {
  const ag::Var h = text_states(ex.memory_tokens);
  if (cfg_.variant == ModulationVariant::None) return h;
  const ag::Var e = ex.emotion_present
                        ? encode_emotion(ex.annotations, ex.memory_words)
                        : ag::constant(Matrix(ex.memory_tokens.size(), static_cast<std::size_t>(cfg_.emotion_dim)));
  return modulate(h, fuse(h, e));
}

EFiLMModel::Outputs EFiLMModel::decode(const ag::Var& memory, std::span<const int> previous_tokens) const {
  const auto heads = static_cast<std::size_t>(cfg_.heads);
  ag::Var x = ag::embedding(params_.get("speech_embedding"), previous_tokens);
  x = ag::add(x, ag::constant(sinusoidal_positions(previous_tokens.size(), static_cast<std::size_t>(cfg_.embed))));
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string p = "decoder" + std::to_string(l);
    const ag::Var n1 = nn::apply_layer_norm(params_, p + ".ln_self", x);
    x = ag::add(x, nn::apply_attention(params_, p + ".self_attn", n1, n1, heads, true));
    const ag::Var n2 = nn::apply_layer_norm(params_, p + ".ln_cross", x);
    x = ag::add(x, nn::apply_attention(params_, p + ".cross_attn", n2, memory, heads, false));
    const ag::Var n3 = nn::apply_layer_norm(params_, p + ".ln_ff", x);
    x = ag::add(x, nn::apply_feed_forward(params_, p + ".ff", n3));
  }
  x = nn::apply_layer_norm(params_, "decoder_ln", x);
  return {nn::apply_linear(params_, "speech_head", x), nn::apply_linear(params_, "emotion_head", x)};
}

EFiLMModel::Outputs EFiLMModel::forward(const TtsExample& ex) const {
  if (ex.targets.empty()) throw ValidationError("forward: example has no targets");
  std::vector<int> prev{cfg_.bos()};
  prev.insert(prev.end(), ex.targets.begin(), ex.targets.end() - 1);
  return decode(memory(ex), prev);
}

json EFiLMModel::to_checkpoint(const json& extra_config) const {
  json config = extra_config;
  config["model"] = efilm_config_to_json(cfg_);
  return {{"schema_version", kCheckpointSchemaVersion},
          {"kind", "efilm"},
          {"config", config},
          {"seed", seed_},
          {"params", params_.to_json()}};
}

EFiLMModel EFiLMModel::from_checkpoint(const json& ckpt) {
  check_checkpoint(ckpt, "efilm");
  EFiLMModel m(efilm_config_from_json(ckpt.at("config").at("model")), ckpt.at("seed").get<std::uint64_t>());
  m.params_.load_json(ckpt.at("params"));
  return m;
}

json Generation::to_json() const {
  return {{"tokens", tokens},
          {"posteriors", posteriors.to_rows()},
          {"mode", mode.sampled ? "sampled" : "greedy"},
          {"seed", mode.sampled ? json(mode.seed) : json(nullptr)}};
}

Generation Generation::from_json(const json& j) {
  Generation g;
  g.tokens = j.at("tokens").get<std::vector<int>>();
  const auto rows = j.at("posteriors").get<std::vector<std::vector<double>>>();
  if (!rows.empty()) g.posteriors = Matrix::from_rows(rows);
  g.mode.sampled = j.value("mode", "greedy") == "sampled";
  if (g.mode.sampled) g.mode.seed = j.at("seed").get<std::uint64_t>();
  return g;
}

namespace {

std::vector<double> softmax(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (p[i] = std::exp(x[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

}  // namespace

Generation generate(const EFiLMModel& m, const TtsExample& ex, int max_len, GenerationMode mode) {
  if (max_len < 1) throw ValidationError("generate: max_len must be at least 1");
  ag::NoGradGuard no_grad;
  const ag::Var mem = m.memory(ex);
  std::mt19937_64 rng(mode.seed);
  Generation g;
  g.mode = mode;
  std::vector<int> prev{m.config().bos()};
  std::vector<std::vector<double>> posteriors;
  for (int step = 0; step < max_len; ++step) {
    const auto out = m.decode(mem, prev);
    const std::size_t last = prev.size() - 1;
    const auto logits = out.speech_logits.value().row(last);
    int token;
    if (mode.sampled) {
      const auto p = softmax(logits);
      token = static_cast<int>(std::discrete_distribution<std::size_t>(p.begin(), p.end())(rng));
    } else {
      token = static_cast<int>(argmax(logits));
    }
    posteriors.push_back(softmax(out.emotion_logits.value().row(last)));
    g.tokens.push_back(token);
    if (token == m.config().eos()) break;
    prev.push_back(token);
  }
  g.posteriors = Matrix::from_rows(posteriors);
  return g;
}

double generation_accuracy(const Generation& g, const TtsExample& ex) {
  const std::size_t n = ex.targets.size() - 1;
  if (n == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < n && t < g.tokens.size(); ++t) hits += g.tokens[t] == ex.targets[t];
  return static_cast<double>(hits) / static_cast<double>(n);
}

bool switches_once_near(const Matrix& posteriors, std::size_t boundary_step, std::size_t tolerance) {
  std::size_t switches = 0, at = 0;
  for (std::size_t t = 1; t < posteriors.rows(); ++t)
    if (argmax(posteriors.row(t)) != argmax(posteriors.row(t - 1))) {
      if (++switches == 1) at = t;
    }
  if (switches != 1) return false;
  return (at > boundary_step ? at - boundary_step : boundary_step - at) <= tolerance;
}

namespace {

TtsBatch batch_of(std::span<const TtsExample> examples, const EFiLMConfig& cfg) {
  TtsBatch b;
  b.vocab = cfg.speech_vocab() + 1;
  for (const auto& ex : examples) {
    b.speech_targets.push_back(ex.targets);
    b.emotion_labels.push_back(ex.emotion_labels);
  }
  return b;
}

}  // namespace

TtsEval evaluate_tts(const EFiLMModel& m, std::span<const TtsExample> examples, const GenLossConfig& loss_cfg) {
  ag::NoGradGuard no_grad;
  TtsEval ev;
  if (examples.empty()) return ev;
  std::vector<ag::Var> speech, emo;
  std::size_t hits = 0, tokens = 0, emo_hits = 0;
  for (const auto& ex : examples) {
    const auto out = m.forward(ex);
    for (std::size_t t = 0; t < ex.targets.size(); ++t) {
      hits += static_cast<int>(argmax(out.speech_logits.value().row(t))) == ex.targets[t];
      emo_hits += static_cast<int>(argmax(out.emotion_logits.value().row(t))) == ex.emotion_labels[t];
      ++tokens;
    }
    speech.push_back(out.speech_logits);
    emo.push_back(out.emotion_logits);
  }
  const TtsBatch b = batch_of(examples, m.config());
  ev.tts_loss = tts_loss(speech, b, loss_cfg.epsilon).scalar();
  ev.emo_loss = emo_loss(emo, b).scalar();
  ev.total_loss = total_loss(ev.tts_loss, ev.emo_loss, loss_cfg);
  ev.token_accuracy = static_cast<double>(hits) / static_cast<double>(tokens);
  ev.emotion_accuracy = static_cast<double>(emo_hits) / static_cast<double>(tokens);
  return ev;
}

EFiLMTrainResult train_efilm(std::span<const TtsExample> train, std::span<const TtsExample> dev,
                             const EFiLMConfig& model_cfg, const TrainConfig& cfg, const GenLossConfig& loss_cfg) {
  cfg.validate();
  loss_cfg.validate();
  if (train.empty()) throw ValidationError("train_efilm: empty training split");
  EFiLMModel model(model_cfg, derive_seed(cfg.seed, "efilm/init"));
  Adam adam(model.params(), cfg.adam());
  const auto eval_set = dev.empty() ? train : dev;

  auto record = [&](int epoch, double tr_tts, double tr_emo) {
    const TtsEval ev = evaluate_tts(model, eval_set, loss_cfg);
    json rec = {{"epoch", epoch},
                {"dev_tts_loss", ev.tts_loss},
                {"dev_emo_loss", ev.emo_loss},
                {"dev_total_loss", ev.total_loss},
                {"dev_token_accuracy", ev.token_accuracy},
                {"dev_emotion_accuracy", ev.emotion_accuracy}};
    rec["train_tts_loss"] = epoch == 0 ? json(nullptr) : json(tr_tts);
    rec["train_emo_loss"] = epoch == 0 ? json(nullptr) : json(tr_emo);
    return std::make_pair(rec, ev.total_loss);
  };

  std::vector<json> log;
  int best_epoch = 0;
  auto [first, best_loss] = record(0, 0.0, 0.0);
  log.push_back(first);
  json best_params = model.params().to_json();

  std::vector<std::size_t> order(train.size());
  std::size_t batch_id = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "efilm/shuffle/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double sum_tts = 0.0, sum_emo = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_id) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.params().zero_grad();
      std::vector<TtsExample> batch_examples;
      std::vector<ag::Var> speech, emo;
      for (std::size_t i = start; i < end; ++i) {
        const TtsExample& ex = train[order[i]];
        const auto out = model.forward(ex);
        speech.push_back(out.speech_logits);
        emo.push_back(out.emotion_logits);
        batch_examples.push_back(ex);
      }
      const TtsBatch b = batch_of(batch_examples, model.config());
      const ag::Var l_tts = tts_loss(speech, b, loss_cfg.epsilon);
      const ag::Var l_emo = emo_loss(emo, b);
      const ag::Var loss = total_loss(l_tts, l_emo, loss_cfg);
      if (!std::isfinite(loss.scalar()))
        throw TrainingDiverged(batch_id, model.params().norm(), "generator loss " + std::to_string(loss.scalar()));
      ag::backward(loss);
      adam.step();
      sum_tts += l_tts.scalar();
      sum_emo += l_emo.scalar();
      ++n_batches;
    }
    auto [rec, dev_loss] = record(epoch, sum_tts / static_cast<double>(n_batches), sum_emo / static_cast<double>(n_batches));
    log.push_back(rec);
    if (dev_loss < best_loss) {
      best_loss = dev_loss;
      best_params = model.params().to_json();
      best_epoch = epoch;
    }
  }
  model.params().load_json(best_params);
  return {std::move(model), std::move(log), best_epoch};
}

EFiLMTrainResult train_efilm(const Corpus& corpus, const EFiLMConfig& model_cfg, const TrainConfig& cfg,
                             const GenLossConfig& loss_cfg, AnnotationSource source) {
  std::vector<TtsExample> train, dev;
  for (const Utterance* u : corpus.split("train")) train.push_back(make_tts_example(*u, source, model_cfg));
  for (const Utterance* u : corpus.split("dev")) dev.push_back(make_tts_example(*u, source, model_cfg));
  return train_efilm(train, dev, model_cfg, cfg, loss_cfg);
}

}  // namespace emofilm
