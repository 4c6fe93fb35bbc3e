#include "doctest.h"

#include "emofilm/efilm.hpp"
#include "gen.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace emofilm;

namespace {

std::vector<ag::Var> consts(const std::vector<Matrix>& ms) {
  std::vector<ag::Var> out;
  for (const auto& m : ms) out.push_back(ag::constant(m));
  return out;
}

EFiLMConfig micro_config(ModulationVariant v = ModulationVariant::Film) {
  EFiLMConfig c;
  c.text_vocab = 3;
  c.embed = 8;
  c.emotion_dim = 4;
  c.heads = 2;
  c.ff = 16;
  c.decoder_layers = 1;
  c.variant = v;
  return c;
}

// Two words, three memory rows, two speech tokens + EOS.
TtsExample micro_example(const EFiLMConfig& c) {
  TtsExample ex;
  ex.utterance_id = "micro";
  ex.memory_tokens = {0, 2, c.text_end()};
  ex.memory_words = {0, 1, 1};
  ex.annotations = {{Emotion::Happy, 0.6}, {Emotion::Sad, 0.3}};
  ex.targets = {0 * c.categories + code(Emotion::Happy), 2 * c.categories + code(Emotion::Sad), c.eos()};
  ex.emotion_labels = {code(Emotion::Happy), code(Emotion::Sad), code(Emotion::Sad)};
  return ex;
}

void perturb(ParameterSet& ps, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& [name, v] : ps.items())
    for (double& x : v.mutable_value().values()) x += rng.uniform(-scale, scale);
}

std::vector<Utterance> utterances(TransitionKind kind, int n, std::uint64_t seed) {
  const auto basis = make_emotion_basis(5, 16, seed);
  CorpusSpec spec;
  spec.transition_kind = kind;
  spec.seed = seed;
  spec.name = "g" + std::to_string(seed);
  std::vector<Utterance> out;
  for (int i = 0; i < n; ++i) out.push_back(synth_utterance(spec, basis, i));
  return out;
}

}  // namespace

TEST_CASE("tts_loss examples") {
  const TtsBatch uniform{{{0, 3, 1}}, {{0, 0, 0}}, 4};
  for (double eps : {0.0, 0.1, 0.5})
    CHECK(tts_loss(std::vector<Matrix>{Matrix(3, 4)}, uniform, eps) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // softmax(ln 3, 0) = (0.75, 0.25)
  const TtsBatch two{{{0}}, {{0}}, 2};
  const std::vector<Matrix> p{Matrix::from_rows({{std::log(3.0), 0.0}})};
  const double expect = -(0.9 * std::log(0.75) + 0.1 * std::log(0.25));
  CHECK(tts_loss(p, two, 0.2) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(tts_loss(p, two, 0.2) == doctest::Approx(0.39754).epsilon(1e-5));

  Matrix sharp(2, 5);
  sharp(0, 1) = 20.0;
  sharp(1, 4) = 20.0;
  CHECK(tts_loss(std::vector<Matrix>{sharp}, TtsBatch{{{1, 4}}, {{0, 0}}, 5}, 0.0) < 1e-3);

  CHECK_THROWS_AS(tts_loss(std::vector<Matrix>{Matrix(1, 4)}, TtsBatch{{{}}, {{}}, 4}, 0.1), ValidationError);
  CHECK_THROWS_AS(tts_loss(std::vector<Matrix>{Matrix(1, 3)}, TtsBatch{{{0}}, {{0}}, 4}, 0.1), ValidationError);
}

TEST_CASE("emo_loss examples") {
  CHECK(emo_loss(std::vector<Matrix>{Matrix(4, 5)}, TtsBatch{{{0}}, {{0, 1, 2, 4}}, 5}) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  Matrix sharp(1, 5);
  sharp(0, 2) = 20.0;
  CHECK(emo_loss(std::vector<Matrix>{sharp}, TtsBatch{{{0}}, {{2}}, 5}) < 1e-3);

  Rng rng(4);
  const std::vector<Matrix> logits{rng.matrix(3, 5, 3.0), rng.matrix(2, 5, 3.0)};  // second has one padded row
  const TtsBatch b{{{0, 0, 0}, {0}}, {{1, 4, 0}, {3}}, 5};
  CHECK(emo_loss(logits, b) == doctest::Approx(oracle::emo_loss(logits, b.emotion_labels)).epsilon(1e-12));
  CHECK(b.total_steps() == 4);
  CHECK_THROWS_AS(emo_loss(std::vector<Matrix>{Matrix(1, 5)}, TtsBatch{{{0}}, {{}}, 5}), ValidationError);
}

TEST_CASE("losses match scalar-loop oracles on random padded batches") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int B = rng.uniform_int(1, 3), V = rng.uniform_int(2, 10);
    const double eps = rng.pick({0.0, 0.1, 0.3});
    TtsBatch batch;
    batch.vocab = V;
    std::vector<Matrix> logits, emo;
    for (int i = 0; i < B; ++i) {
      const int L = rng.uniform_int(1, 5), pad = rng.uniform_int(0, 2);
      logits.push_back(rng.matrix(static_cast<std::size_t>(L + pad), static_cast<std::size_t>(V), 4.0));
      emo.push_back(rng.matrix(static_cast<std::size_t>(L + pad), 5, 4.0));
      batch.speech_targets.push_back(rng.ints(static_cast<std::size_t>(L), 0, V - 1));
      batch.emotion_labels.push_back(rng.ints(static_cast<std::size_t>(L), 0, 4));
    }
    CHECK(std::abs(tts_loss(logits, batch, eps) - oracle::tts_loss(logits, batch.speech_targets, eps)) < 1e-8);
    CHECK(std::abs(emo_loss(emo, batch) - oracle::emo_loss(emo, batch.emotion_labels)) < 1e-8);
    // Graph and value paths agree exactly.
    CHECK(tts_loss(consts(logits), batch, eps).scalar() == tts_loss(logits, batch, eps));
    CHECK(emo_loss(consts(emo), batch).scalar() == emo_loss(emo, batch));
  }
}

TEST_CASE("epsilon = 0 reduces tts_loss to mean cross-entropy") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto L = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const std::vector<Matrix> logits{rng.matrix(L, 7, 3.0)};
    TtsBatch b{{rng.ints(L, 0, 6)}, {std::vector<int>(L, 0)}, 7};
    const std::vector<ag::Var> v = consts(logits);
    CHECK(tts_loss(v, b, 0.0).scalar() == ag::cross_entropy(v, b.speech_targets).scalar());
  }
}

TEST_CASE("total_loss combination") {
  const GenLossConfig zero{0.1, 0.0};
  CHECK(total_loss(1.25, 7.0, zero) == 1.25);
  CHECK(total_loss(1.0, 0.5, GenLossConfig{0.1, 1.0}) == 1.5);
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = rng.uniform(0, 5), b = rng.uniform(0, 5), lam = rng.uniform(0, 2);
    const double l0 = total_loss(a, b, {0.1, 0.0}), l1 = total_loss(a, b, {0.1, lam}),
                 l2 = total_loss(a, b, {0.1, 2 * lam});
    CHECK(l2 - l0 == doctest::Approx(2 * (l1 - l0)).epsilon(1e-12));
  }
  const ag::Var g = total_loss(ag::constant(Matrix(1, 1, 2.0)), ag::constant(Matrix(1, 1, 4.0)), {0.1, 0.25});
  CHECK(g.scalar() == 3.0);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((GenLossConfig{1.0, 0.3}.validate()), ValidationError);
  CHECK_THROWS_AS((GenLossConfig{-0.1, 0.3}.validate()), ValidationError);
  CHECK_THROWS_AS((GenLossConfig{0.1, -1.0}.validate()), ValidationError);
  EFiLMConfig c;
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(variant_from_name("concat"), ValidationError);
  CHECK_THROWS_AS(annotation_source_from_name("sentence"), ValidationError);
  for (auto v : {ModulationVariant::Film, ModulationVariant::Addition, ModulationVariant::None})
    CHECK(variant_from_name(variant_name(v)) == v);
  EFiLMConfig d;
  d.variant = ModulationVariant::Addition;
  d.embed = 32;
  CHECK(efilm_config_to_json(efilm_config_from_json(efilm_config_to_json(d))) == efilm_config_to_json(d));
  CHECK(d.speech_vocab() == d.text_vocab * 5);
}

TEST_CASE("encode_emotion") {
  EFiLMModel m(micro_config(), 3);
  const Matrix& cat = m.params().get("emotion.category").value();
  const Matrix& inten = m.params().get("emotion.intensity").value();

  const std::vector<WordEmotionAnnotation> flat{{Emotion::Angry, 0.0}, {Emotion::Surprise, 0.0}};
  const std::vector<int> rows{0, 1, 1};
  const Matrix e0 = m.encode_emotion(flat, rows).value();
  for (std::size_t c = 0; c < e0.cols(); ++c) {
    CHECK(e0(0, c) == cat(static_cast<std::size_t>(code(Emotion::Angry)), c));
    CHECK(e0(1, c) == cat(static_cast<std::size_t>(code(Emotion::Surprise)), c));
  }

  const std::vector<WordEmotionAnnotation> ann{{Emotion::Happy, 0.7}, {Emotion::Sad, 0.25}};
  const Matrix e = m.encode_emotion(ann, rows).value();
  for (std::size_t c = 0; c < e.cols(); ++c) {
    CHECK(e(1, c) == e(2, c));
    CHECK(e(1, c) == doctest::Approx(cat(static_cast<std::size_t>(code(Emotion::Sad)), c) + 0.25 * inten(0, c)));
  }
  CHECK(m.encode_emotion(ann, rows).value() == e);

  const std::vector<int> unmapped{0, 2};
  CHECK_THROWS_AS(m.encode_emotion(ann, unmapped), ValidationError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(m.encode_emotion(ann, negative), ValidationError);
}

TEST_CASE("film arithmetic") {
  const Matrix h = Matrix::from_rows({{1.0, 2.0}});
  const Matrix out = apply_film(h, Matrix::from_rows({{2.0, 0.5}}), Matrix::from_rows({{1.0, -1.0}}));
  CHECK(out(0, 0) == 3.0);
  CHECK(out(0, 1) == 0.0);
  // The graph op takes γ − 1 and β side by side.
  const ag::Var g = ag::film(ag::constant(h), ag::constant(Matrix::from_rows({{1.0, -0.5, 1.0, -1.0}})));
  CHECK(g.value() == out);
  CHECK_THROWS(apply_film(Matrix(2, 2), Matrix(1, 3), Matrix(1, 3)));
  CHECK_THROWS(ag::film(ag::constant(Matrix(2, 2)), ag::constant(Matrix(3, 4))));

  // Row broadcast of a single γ/β row.
  const Matrix two = apply_film(Matrix::from_rows({{1, 1}, {2, 2}}), Matrix::from_rows({{3, 1}}), Matrix(1, 2));
  CHECK(two(1, 0) == 6.0);
}

TEST_CASE("zero-initialized FiLM is an exact identity") {
  Rng rng(8);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    EFiLMConfig fc;
    fc.embed = 16;
    fc.emotion_dim = 8;
    fc.ff = 32;
    EFiLMConfig nc = fc;
    nc.variant = ModulationVariant::None;
    const EFiLMModel film(fc, seed), none(nc, seed);

    for (const auto& u : utterances(TransitionKind::Strong, 3, seed)) {
      const TtsExample ex = make_tts_example(u, AnnotationSource::GoldWordLevel, fc);
      const ag::Var h = film.text_states(ex.memory_tokens);
      CHECK(film.memory(ex).value() == h.value());
      const auto a = film.forward(ex), b = none.forward(ex);
      CHECK(a.speech_logits.value() == b.speech_logits.value());
      CHECK(a.emotion_logits.value() == b.emotion_logits.value());
    }
  }
}

TEST_CASE("variant none ignores the emotion input") {
  const EFiLMConfig c = micro_config(ModulationVariant::None);
  EFiLMModel m(c, 4);
  perturb(m.params(), 1, 0.3);
  TtsExample a = micro_example(c), b = a;
  b.annotations = {{Emotion::Angry, 1.0}, {Emotion::Neutral, 0.0}};
  CHECK(m.forward(a).speech_logits.value() == m.forward(b).speech_logits.value());
  b.emotion_present = false;
  CHECK(m.forward(a).speech_logits.value() == m.forward(b).speech_logits.value());

  // With a trained-looking FiLM projection the emotion does matter.
  EFiLMModel f(micro_config(), 4);
  perturb(f.params(), 1, 0.3);
  TtsExample x = micro_example(micro_config()), y = x;
  y.annotations = {{Emotion::Angry, 1.0}, {Emotion::Neutral, 0.0}};
  CHECK(f.forward(x).speech_logits.value() != f.forward(y).speech_logits.value());
}

TEST_CASE("gradient check on the micro generator") {
  for (auto v : {ModulationVariant::Film, ModulationVariant::Addition}) {
    const EFiLMConfig c = micro_config(v);
    EFiLMModel m(c, 9);
    perturb(m.params(), 21, 0.3);  // moves FiLM off zero so its gradient path is exercised
    const TtsExample ex = micro_example(c);
    const TtsBatch batch{{ex.targets}, {ex.emotion_labels}, c.speech_vocab() + 1};
    const GenLossConfig lc{0.1, 0.7};
    const auto loss = [&] {
      const auto out = m.forward(ex);
      const std::vector<ag::Var> s{out.speech_logits}, e{out.emotion_logits};
      return total_loss(tts_loss(s, batch, lc.epsilon), emo_loss(e, batch), lc);
    };
    const auto r = grad_check(m.params(), loss);
    INFO(variant_name(v), " worst ", r.worst);
    CHECK(r.checked == m.params().count());
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("teacher-forced decoding is causal") {
  const EFiLMConfig c = micro_config();
  EFiLMModel m(c, 10);
  perturb(m.params(), 2, 0.3);
  TtsExample ex = micro_example(c);
  ex.targets = {1, 7, 12, 4, c.eos()};
  ex.emotion_labels = {1, 2, 2, 4, 4};
  const auto base = m.forward(ex);
  for (std::size_t t = 0; t + 1 < ex.targets.size(); ++t) {
    TtsExample p = ex;
    p.targets[t] = (p.targets[t] + 5) % c.speech_vocab();
    const auto out = m.forward(p);
    for (std::size_t s = 0; s < ex.targets.size(); ++s) {
      const auto a = base.speech_logits.value().row(s), b = out.speech_logits.value().row(s);
      const bool same = std::equal(a.begin(), a.end(), b.begin());
      if (s <= t) CHECK(same);
    }
    const auto a = base.speech_logits.value().row(t + 1), b = out.speech_logits.value().row(t + 1);
    CHECK_FALSE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST_CASE("make_tts_example") {
  EFiLMConfig c;
  const auto us = utterances(TransitionKind::Strong, 5, 11);
  for (const auto& u : us) {
    const TtsExample ex = make_tts_example(u, AnnotationSource::GoldWordLevel, c);
    CHECK(ex.memory_tokens.size() == u.text_tokens.size() + 1);
    CHECK(ex.memory_tokens.back() == c.text_end());
    CHECK(ex.targets.size() == u.speech_tokens->size() + 1);
    CHECK(ex.targets.back() == c.eos());
    CHECK(ex.emotion_labels.size() == ex.targets.size());
    CHECK(ex.annotations == *u.annotations);
    for (std::size_t t = 0; t < u.text_tokens.size(); ++t)
      CHECK(ex.emotion_labels[t] == code((*u.annotations)[static_cast<std::size_t>(u.word_of_token[t])].category));
    CHECK(ex.boundary_step.has_value());

    const TtsExample g = make_tts_example(u, AnnotationSource::GlobalOnly, c);
    for (const auto& a : g.annotations) {
      CHECK(a.intensity == 1.0);
      CHECK(a.category == g.annotations.front().category);
    }
    const TtsExample n = make_tts_example(u, AnnotationSource::None, c);
    CHECK_FALSE(n.emotion_present);
    CHECK(n.emotion_labels == ex.emotion_labels);
  }

  Utterance bad = us[0];
  bad.speech_tokens.reset();
  CHECK_THROWS_AS(make_tts_example(bad, AnnotationSource::GoldWordLevel, c), ValidationError);
  Utterance nolabels = us[0];
  nolabels.annotations.reset();
  CHECK_THROWS_AS(make_tts_example(nolabels, AnnotationSource::GoldWordLevel, c), ValidationError);
  const std::vector<WordEmotionAnnotation> short_cond{{Emotion::Happy, 0.5}};
  CHECK_THROWS_AS(make_tts_example(us[0], AnnotationSource::GoldWordLevel, c, &short_cond), ValidationError);
}

TEST_CASE("generation contract") {
  EFiLMConfig c;
  c.embed = 16;
  c.emotion_dim = 8;
  c.ff = 32;
  EFiLMModel m(c, 12);
  perturb(m.params(), 3, 0.2);
  const auto us = utterances(TransitionKind::Mild, 4, 12);
  for (const auto& u : us) {
    const TtsExample ex = make_tts_example(u, AnnotationSource::GoldWordLevel, c);
    for (int max_len : {1, 3, 40}) {
      const Generation g = generate(m, ex, max_len);
      CHECK(g.tokens.size() <= static_cast<std::size_t>(max_len));
      CHECK(g.posteriors.rows() == g.tokens.size());
      for (std::size_t r = 0; r < g.posteriors.rows(); ++r) {
        double s = 0.0;
        for (double p : g.posteriors.row(r)) s += p;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
      const auto eos = std::find(g.tokens.begin(), g.tokens.end(), c.eos());
      if (eos != g.tokens.end()) CHECK(eos + 1 == g.tokens.end());
      CHECK(generate(m, ex, max_len).tokens == g.tokens);
    }
    const Generation s1 = generate(m, ex, 30, {true, 99}), s2 = generate(m, ex, 30, {true, 99});
    CHECK(s1.tokens == s2.tokens);
    CHECK(s1.posteriors == s2.posteriors);
    CHECK_THROWS_AS(generate(m, ex, 0), ValidationError);

    const Generation back = Generation::from_json(s1.to_json());
    CHECK(back.tokens == s1.tokens);
    CHECK(back.posteriors == s1.posteriors);
    CHECK(back.mode.sampled);
    CHECK(back.mode.seed == 99);
    CHECK(generate(m, ex, 5).to_json().at("seed").is_null());
  }
}

TEST_CASE("generation accuracy and switch detection") {
  EFiLMConfig c;
  TtsExample ex;
  ex.targets = {3, 8, 1, c.eos()};
  Generation g;
  g.tokens = {3, 8, 1, c.eos()};
  CHECK(generation_accuracy(g, ex) == 1.0);
  g.tokens = {3, 9};
  CHECK(generation_accuracy(g, ex) == doctest::Approx(1.0 / 3.0));
  g.tokens = {};
  CHECK(generation_accuracy(g, ex) == 0.0);

  const Matrix p = Matrix::from_rows({{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.2, 0.8}});
  CHECK(switches_once_near(p, 2));
  CHECK(switches_once_near(p, 4));
  CHECK_FALSE(switches_once_near(p, 5));
  CHECK_FALSE(switches_once_near(Matrix::from_rows({{0.9, 0.1}, {0.1, 0.9}, {0.9, 0.1}}), 1));
  CHECK_FALSE(switches_once_near(Matrix::from_rows({{0.9, 0.1}, {0.9, 0.1}}), 1));
}

TEST_CASE("checkpoint round trip and rejection") {
  EFiLMConfig c = micro_config(ModulationVariant::Addition);
  EFiLMModel m(c, 13);
  perturb(m.params(), 4, 0.2);
  const nlohmann::json ck = m.to_checkpoint({{"note", "x"}});
  CHECK(ck.at("kind") == "efilm");
  const EFiLMModel back = EFiLMModel::from_checkpoint(nlohmann::json::parse(ck.dump()));
  const TtsExample ex = micro_example(c);
  CHECK(back.forward(ex).speech_logits.value() == m.forward(ex).speech_logits.value());
  CHECK(back.config().variant == ModulationVariant::Addition);

  nlohmann::json future = ck;
  future["schema_version"] = 999;
  CHECK_THROWS_AS(EFiLMModel::from_checkpoint(future), IncompatibleCheckpoint);
  nlohmann::json wrong = ck;
  wrong["kind"] = "annotator";
  CHECK_THROWS_AS(EFiLMModel::from_checkpoint(wrong), IncompatibleCheckpoint);
}

TEST_CASE("short training lowers dev loss and is deterministic") {
  EFiLMConfig c;
  c.embed = 32;
  c.emotion_dim = 16;
  c.ff = 64;
  std::vector<TtsExample> train, dev;
  const auto us = utterances(TransitionKind::Mild, 60, 14);
  for (std::size_t i = 0; i < us.size(); ++i)
    (i < 48 ? train : dev).push_back(make_tts_example(us[i], AnnotationSource::GoldWordLevel, c));
  TrainConfig t;
  t.epochs = 3;
  t.seed = 5;
  t.learning_rate = 3e-3;
  const GenLossConfig lc;
  const double before = evaluate_tts(EFiLMModel(c, derive_seed(t.seed, "efilm/init")), dev, lc).total_loss;
  const auto r = train_efilm(train, dev, c, t, lc);
  const double after = evaluate_tts(r.model, dev, lc).total_loss;
  MESSAGE("dev total loss " << before << " -> " << after);
  CHECK(after < before);
  CHECK(r.log.size() == 4);
  const auto again = train_efilm(train, dev, c, t, lc);
  CHECK(again.model.params().to_json() == r.model.params().to_json());

  TrainConfig boom = t;
  boom.learning_rate = 1e300;
  boom.clip_norm = 0.0;
  boom.epochs = 1;
  CHECK_THROWS_AS(train_efilm(train, dev, c, boom, lc), TrainingDiverged);
}
