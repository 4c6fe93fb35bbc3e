#include "doctest.h"

#include "emofilm/metrics.hpp"
#include "gen.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace emofilm;

namespace {

EmotionTrajectory scalar_traj(const std::vector<double>& xs) {
  Matrix m(xs.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) m(i, 0) = xs[i];
  return {m, "feature"};
}

EmotionTrajectory traj(std::vector<std::vector<double>> rows) { return {Matrix::from_rows(rows), "posterior"}; }

EmotionTrajectory random_traj(Rng& rng, std::size_t len, std::size_t dim) {
  return {rng.matrix(len, dim, 2.0), "posterior"};
}

}  // namespace

TEST_CASE("dtw examples") {
  const auto a = traj({{0.1, 0.9}, {0.5, 0.5}, {1.0, 0.0}});
  CHECK(dtw(a, a) == 0.0);
  CHECK(dtw(scalar_traj({1, 2, 3}), scalar_traj({1, 3})) == 1.0);
  CHECK(dtw(traj({{0, 0}}), traj({{3, 4}})) == 5.0);
  CHECK_THROWS_AS(dtw(traj({{0, 0}}), traj({{0, 0, 0}})), ValidationError);
  CHECK_THROWS_AS(dtw(EmotionTrajectory{Matrix(0, 2), "posterior"}, a), ValidationError);
}

TEST_CASE("dtw matches exhaustive path enumeration") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(static_cast<std::size_t>(rng.uniform_int(1, 6))), b(static_cast<std::size_t>(rng.uniform_int(1, 6)));
    for (double& x : a) x = rng.uniform_int(-4, 4) * 0.5;  // exact in binary: ties resolve identically
    for (double& x : b) x = rng.uniform_int(-4, 4) * 0.5;
    CHECK(dtw(scalar_traj(a), scalar_traj(b)) == oracle::dtw_exhaustive(a, b));
  }
}

TEST_CASE("dtw properties: symmetry, self-distance, adjacent duplicates") {
  Rng rng(18);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_traj(rng, static_cast<std::size_t>(rng.uniform_int(1, 8)), 5);
    const auto b = random_traj(rng, static_cast<std::size_t>(rng.uniform_int(1, 8)), 5);
    CHECK(dtw(a, b) == doctest::Approx(dtw(b, a)).epsilon(1e-12));
    CHECK(dtw(a, a) == 0.0);
    CHECK(dtw(a, b) >= 0.0);

    std::vector<std::vector<double>> dup;
    for (std::size_t r = 0; r < a.points.rows(); ++r) {
      const auto row = a.points.row(r);
      const int copies = rng.uniform_int(1, 3);
      for (int c = 0; c < copies; ++c) dup.emplace_back(row.begin(), row.end());
    }
    CHECK(dtw(a, traj(dup)) == 0.0);
  }
}

TEST_CASE("emo_sim examples") {
  const auto a = traj({{0.2, 0.8}, {0.6, 0.4}});
  CHECK(emo_sim(a, a) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(emo_sim(traj({{1, 0}}), traj({{0, 1}})) == 0.0);
  CHECK(emo_sim(traj({{1, 0}}), traj({{1, 1}})) == doctest::Approx(70.71068).epsilon(1e-7));
  CHECK(emo_sim(traj({{2, 0}, {0, 0}}), traj({{1, 1}, {1, 1}, {1, 1}})) == doctest::Approx(70.71068).epsilon(1e-7));
  CHECK_THROWS_AS(emo_sim(traj({{1, -1}, {-1, 1}}), a), ValidationError);
  CHECK_THROWS_AS(emo_sim(traj({{1}}), a), ValidationError);
  // No clamping: opposite means give −100.
  CHECK(emo_sim(traj({{1, 0}}), traj({{-1, 0}})) == doctest::Approx(-100.0));
}

TEST_CASE("emo_sim properties: symmetry and positive scale invariance") {
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_traj(rng, static_cast<std::size_t>(rng.uniform_int(1, 8)), 5);
    const auto b = random_traj(rng, static_cast<std::size_t>(rng.uniform_int(1, 8)), 5);
    CHECK(emo_sim(a, b) == doctest::Approx(emo_sim(b, a)).epsilon(1e-12));
    EmotionTrajectory scaled = a;
    const double s = rng.uniform(0.01, 50.0);
    for (double& v : scaled.points.values()) v *= s;
    CHECK(emo_sim(a, scaled) == doctest::Approx(100.0).epsilon(1e-9));
  }
}

TEST_CASE("per_emotion_accuracy examples") {
  using E = Emotion;
  const std::vector<E> gold{E::Happy, E::Sad, E::Angry};
  const auto perfect = per_emotion_accuracy(gold, gold);
  CHECK(perfect.size() == 3);
  for (const auto& [e, acc] : perfect) CHECK(acc == 1.0);

  const std::vector<E> g2{E::Happy, E::Happy}, p2{E::Happy, E::Sad};
  const auto r = per_emotion_accuracy(p2, g2);
  CHECK(r.size() == 1);
  CHECK(r.at(E::Happy) == 0.5);

  const std::vector<E> empty;
  CHECK_THROWS_AS(per_emotion_accuracy(empty, empty), ValidationError);
  CHECK_THROWS_AS(per_emotion_accuracy(p2, gold), ValidationError);
}

TEST_CASE("per-emotion accuracies weighted by gold counts average to overall accuracy") {
  Rng rng(20);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 40));
    std::vector<Emotion> gold, pred;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      gold.push_back(emotion_from_code(rng.uniform_int(0, 4)));
      pred.push_back(rng.uniform_int(0, 2) ? gold.back() : emotion_from_code(rng.uniform_int(0, 4)));
      hits += pred.back() == gold.back();
    }
    const auto acc = per_emotion_accuracy(pred, gold);
    double weighted = 0.0;
    for (const auto& [e, a] : acc) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      weighted += a * static_cast<double>(std::count(gold.begin(), gold.end(), e));
    }
    CHECK(weighted / static_cast<double>(n) == doctest::Approx(static_cast<double>(hits) / static_cast<double>(n)));
  }
}

TEST_CASE("evaluate_corpus examples") {
  using E = Emotion;
  const std::vector<UtteranceEval> gold{{"u1", traj({{1, 0}, {0, 1}}), {E::Angry, E::Happy}},
                                        {"u2", traj({{0, 1}}), {E::Happy}}};
  const auto same = evaluate_corpus(gold, gold);
  CHECK(same.emo_sim_percent == doctest::Approx(100.0));
  CHECK(same.dtw_cost == 0.0);
  CHECK(same.overall_accuracy == 1.0);
  for (const auto& [e, a] : same.per_category_accuracy) CHECK(a == 1.0);
  CHECK(same.n_utterances == 2);
  CHECK(same.n_words == 3);
  CHECK(same.to_json().at("dtw_cost") == 0.0);

  const std::vector<UtteranceEval> missing{gold[0]};
  try {
    evaluate_corpus(missing, gold);
    FAIL("expected an id mismatch error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("u2") != std::string::npos);
  }

  // dtw 2 and 4 → macro average 3.
  const std::vector<UtteranceEval> g{{"a", scalar_traj({1}), {E::Sad}}, {"b", scalar_traj({1}), {E::Sad}}};
  const std::vector<UtteranceEval> p{{"a", scalar_traj({3}), {E::Sad}}, {"b", scalar_traj({5}), {E::Angry}}};
  const auto r = evaluate_corpus(p, g);
  CHECK(r.dtw_cost == 3.0);
  CHECK(r.overall_accuracy == 0.5);
  CHECK(r.per_category_accuracy.at(E::Sad) == 0.5);
  CHECK(r.trajectory_kind == "feature");
}
