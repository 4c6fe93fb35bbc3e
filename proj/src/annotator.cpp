#include "emofilm/annotator.hpp"

#include "emofilm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace emofilm {

using nlohmann::json;

void AnnotatorConfig::validate() const {
  if (input_dim < 1 || hidden < 1 || layers < 0 || heads < 1 || ff < 1)
    throw ValidationError("annotator dimensions must be positive");
  if (hidden % heads != 0) throw ValidationError("annotator hidden width must be divisible by heads");
  if (categories != kNumEmotions) throw ValidationError("annotator needs 5 categories");
}

json annotator_config_to_json(const AnnotatorConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden", c.hidden}, {"layers", c.layers},
          {"heads", c.heads},         {"ff", c.ff},         {"categories", c.categories}};
}

AnnotatorConfig annotator_config_from_json(const json& j) {
  AnnotatorConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff = j.value("ff", c.ff);
  c.categories = j.value("categories", c.categories);
  c.validate();
  return c;
}

void AnnotatorLossConfig::validate() const {
  if (!(lambda_cls >= 0.0) || !(lambda_reg >= 0.0) || !(lambda_cls + lambda_reg > 0.0))
    throw ValidationError("annotator loss weights must be non-negative with a positive sum");
}

AnnotatorModel::AnnotatorModel(AnnotatorConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg_.input_dim);
  const auto h = static_cast<std::size_t>(cfg_.hidden);
  nn::add_linear(params_, "input", d, h, seed_);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "encoder" + std::to_string(l);
    nn::add_layer_norm(params_, p + ".ln_attn", h);
    nn::add_attention(params_, p + ".attn", h, seed_);
    nn::add_layer_norm(params_, p + ".ln_ff", h);
    nn::add_feed_forward(params_, p + ".ff", h, static_cast<std::size_t>(cfg_.ff), seed_);
  }
  nn::add_layer_norm(params_, "final_ln", h);
  nn::add_linear(params_, "cls_head", h, static_cast<std::size_t>(cfg_.categories), seed_);
  nn::add_linear(params_, "reg_head", h, 1, seed_);
}

AnnotatorModel::Output AnnotatorModel::forward_spans(const Matrix& frames, std::span<const FrameSpan> spans) const {
  if (frames.cols() != static_cast<std::size_t>(cfg_.input_dim))
    throw ValidationError("annotator expects " + std::to_string(cfg_.input_dim) + "-dim features, got " +
                          std::to_string(frames.cols()));
  if (spans.empty()) throw ValidationError("annotator forward needs at least one word");
  const auto h = static_cast<std::size_t>(cfg_.hidden);
  ag::Var x = nn::apply_linear(params_, "input", ag::constant(frames));
  x = ag::add(x, ag::constant(sinusoidal_positions(frames.rows(), h)));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "encoder" + std::to_string(l);
    const ag::Var n1 = nn::apply_layer_norm(params_, p + ".ln_attn", x);
    x = ag::add(x, nn::apply_attention(params_, p + ".attn", n1, n1, static_cast<std::size_t>(cfg_.heads), false));
    const ag::Var n2 = nn::apply_layer_norm(params_, p + ".ln_ff", x);
    x = ag::add(x, nn::apply_feed_forward(params_, p + ".ff", n2));
  }
  x = nn::apply_layer_norm(params_, "final_ln", x);

  std::vector<ag::Var> pooled;
  pooled.reserve(spans.size());
  for (const FrameSpan& s : spans) {
    if (s.hi <= s.lo || s.hi > frames.rows()) throw DegenerateSpanError("annotator: word span outside the sequence");
    pooled.push_back(ag::rows_mean(x, s.lo, s.hi));
  }
  const ag::Var words = ag::concat_rows(pooled);
  return {nn::apply_linear(params_, "cls_head", words), ag::sigmoid(nn::apply_linear(params_, "reg_head", words))};
}

AnnotatorModel::Output AnnotatorModel::forward(const EmotionFeatureSequence& seq,
                                               std::span<const WordAlignment> words) const {
  std::vector<FrameSpan> spans;
  spans.reserve(words.size());
  for (const auto& w : words) spans.push_back(frames_for_word(w, seq.hop_s(), seq.length()));
  return forward_spans(seq.frames(), spans);
}

json AnnotatorModel::to_checkpoint(const json& extra_config) const {
  json config = extra_config;
  config["model"] = annotator_config_to_json(cfg_);
  return {{"schema_version", kCheckpointSchemaVersion},
          {"kind", "annotator"},
          {"config", config},
          {"seed", seed_},
          {"params", params_.to_json()}};
}

AnnotatorModel AnnotatorModel::from_checkpoint(const json& ckpt) {
  check_checkpoint(ckpt, "annotator");
  AnnotatorModel m(annotator_config_from_json(ckpt.at("config").at("model")), ckpt.at("seed").get<std::uint64_t>());
  m.params_.load_json(ckpt.at("params"));
  return m;
}

AnnotatorLossVars annotator_loss(const ag::Var& logits, const ag::Var& intensity,
                                 std::span<const WordEmotionAnnotation> golds, const AnnotatorLossConfig& cfg) {
  cfg.validate();
  if (logits.rows() != golds.size() || intensity.rows() != golds.size())
    throw ValidationError("annotator_loss: " + std::to_string(logits.rows()) + " predictions for " +
                          std::to_string(golds.size()) + " gold annotations");
  std::vector<std::vector<int>> codes(1);
  std::vector<double> targets;
  for (const auto& g : golds) {
    codes[0].push_back(code(g.category));
    targets.push_back(g.intensity);
  }
  const ag::Var cls = ag::cross_entropy(std::span(&logits, 1), codes);
  const ag::Var reg = ag::mse(intensity, targets);
  const ag::Var total = ag::add(ag::scale(cls, cfg.lambda_cls), ag::scale(reg, cfg.lambda_reg));
  return {total, cls, reg};
}

AnnotatorLoss annotator_loss(const Matrix& logits, const Matrix& intensity,
                             std::span<const WordEmotionAnnotation> golds, const AnnotatorLossConfig& cfg) {
  const auto v = annotator_loss(ag::constant(logits), ag::constant(intensity), golds, cfg);
  return {v.total.scalar(), v.cls.scalar(), v.reg.scalar()};
}

Emotion argmax_category(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("argmax_category: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return emotion_from_code(static_cast<int>(best));
}

std::vector<WordEmotionAnnotation> annotate(const AnnotatorModel& m, const Utterance& u) {
  ag::NoGradGuard no_grad;
  const auto out = m.forward(u.features, u.words);
  std::vector<WordEmotionAnnotation> anns;
  for (std::size_t w = 0; w < u.words.size(); ++w)
    anns.push_back({argmax_category(out.logits.value().row(w)), out.intensity.value()(w, 0)});
  return anns;
}

namespace {

const std::vector<WordEmotionAnnotation>& gold_of(const Utterance& u) {
  if (!u.annotations) throw ValidationError("utterance " + u.utterance_id + " has no gold annotations");
  return *u.annotations;
}

}  // namespace

AnnotatorEval evaluate_annotator(const AnnotatorModel& m, std::span<const Utterance* const> utterances,
                                 const AnnotatorLossConfig& loss_cfg) {
  ag::NoGradGuard no_grad;
  AnnotatorEval ev;
  if (utterances.empty()) return ev;
  std::vector<ag::Var> logits, intens;
  std::vector<WordEmotionAnnotation> golds;
  for (const Utterance* u : utterances) {
    const auto out = m.forward(u->features, u->words);
    logits.push_back(out.logits);
    intens.push_back(out.intensity);
    const auto& g = gold_of(*u);
    golds.insert(golds.end(), g.begin(), g.end());
  }
  const ag::Var all_logits = ag::concat_rows(logits);
  const ag::Var all_int = ag::concat_rows(intens);
  const auto l = annotator_loss(all_logits, all_int, golds, loss_cfg);
  ev.loss = {l.total.scalar(), l.cls.scalar(), l.reg.scalar()};
  std::size_t hits = 0;
  double abs_err = 0.0;
  for (std::size_t w = 0; w < golds.size(); ++w) {
    hits += argmax_category(all_logits.value().row(w)) == golds[w].category;
    abs_err += std::abs(all_int.value()(w, 0) - golds[w].intensity);
  }
  ev.words = golds.size();
  ev.accuracy = static_cast<double>(hits) / static_cast<double>(golds.size());
  ev.intensity_mae = abs_err / static_cast<double>(golds.size());
  return ev;
}

AnnotatorTrainResult train_annotator(std::span<const Utterance* const> train, std::span<const Utterance* const> dev,
                                     const AnnotatorConfig& model_cfg, const TrainConfig& cfg,
                                     const AnnotatorLossConfig& loss_cfg) {
  cfg.validate();
  loss_cfg.validate();
  if (train.empty()) throw ValidationError("train_annotator: empty training split");
  for (const Utterance* u : train) gold_of(*u);

  AnnotatorModel model(model_cfg, derive_seed(cfg.seed, "annotator/init"));
  Adam adam(model.params(), cfg.adam());
  const auto& eval_set = dev.empty() ? train : dev;

  auto record = [&](int epoch, double train_loss) {
    const AnnotatorEval ev = evaluate_annotator(model, eval_set, loss_cfg);
    json rec = {{"epoch", epoch},
                {"dev_loss", ev.loss.total},
                {"dev_cls_loss", ev.loss.cls},
                {"dev_reg_loss", ev.loss.reg},
                {"dev_accuracy", ev.accuracy},
                {"dev_intensity_mae", ev.intensity_mae}};
    rec["train_loss"] = epoch == 0 ? json(nullptr) : json(train_loss);
    return std::make_pair(rec, ev.loss.total);
  };

  std::vector<json> log;
  int best_epoch = 0;
  auto [first, best_loss] = record(0, 0.0);
  log.push_back(first);
  json best_params = model.params().to_json();

  std::vector<std::size_t> order(train.size());
  std::size_t batch_id = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "annotator/shuffle/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_id) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.params().zero_grad();
      std::vector<ag::Var> logits, intens;
      std::vector<WordEmotionAnnotation> golds;
      for (std::size_t i = start; i < end; ++i) {
        const Utterance& u = *train[order[i]];
        const auto out = model.forward(u.features, u.words);
        logits.push_back(out.logits);
        intens.push_back(out.intensity);
        golds.insert(golds.end(), u.annotations->begin(), u.annotations->end());
      }
      const auto loss = annotator_loss(ag::concat_rows(logits), ag::concat_rows(intens), golds, loss_cfg);
      const double value = loss.total.scalar();
      if (!std::isfinite(value))
        throw TrainingDiverged(batch_id, model.params().norm(), "annotator loss " + std::to_string(value));
      ag::backward(loss.total);
      adam.step();
      loss_sum += value;
      ++n_batches;
    }
    auto [rec, dev_loss] = record(epoch, loss_sum / static_cast<double>(n_batches));
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

AnnotatorTrainResult train_annotator(const Corpus& corpus, const AnnotatorConfig& model_cfg, const TrainConfig& cfg,
                                     const AnnotatorLossConfig& loss_cfg) {
  const auto train = corpus.split("train");
  const auto dev = corpus.split("dev");
  return train_annotator(train, dev, model_cfg, cfg, loss_cfg);
}

}  // namespace emofilm
