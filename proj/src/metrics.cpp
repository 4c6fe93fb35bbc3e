#include "emofilm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace emofilm {

using nlohmann::json;

void EmotionTrajectory::validate() const {
  if (points.rows() == 0 || points.cols() == 0) throw ValidationError("empty emotion trajectory");
  for (double v : points.values())
    if (!std::isfinite(v)) throw ValidationError("non-finite value in emotion trajectory");
}

namespace {

double euclidean(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

std::vector<double> mean_vector(const Matrix& m) {
  std::vector<double> mu(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) mu[c] += m(r, c);
  for (double& v : mu) v /= static_cast<double>(m.rows());
  return mu;
}

}  // namespace

double dtw(const EmotionTrajectory& a, const EmotionTrajectory& b) {
  a.validate();
  b.validate();
  if (a.points.cols() != b.points.cols())
    throw ValidationError("dtw: trajectory dimensions differ (" + std::to_string(a.points.cols()) + " vs " +
                          std::to_string(b.points.cols()) + ")");
  const std::size_t n = a.points.rows(), m = b.points.rows();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, kInf), cur(m + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = kInf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = euclidean(a.points.row(i - 1), b.points.row(j - 1)) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double emo_sim(const EmotionTrajectory& a, const EmotionTrajectory& b) {
  a.validate();
  b.validate();
  if (a.points.cols() != b.points.cols()) throw ValidationError("emo_sim: trajectory dimensions differ");
  const auto ma = mean_vector(a.points), mb = mean_vector(b.points);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    dot += ma[i] * mb[i];
    na += ma[i] * ma[i];
    nb += mb[i] * mb[i];
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("emo_sim: undefined similarity for a zero mean vector");
  return 100.0 * dot / (std::sqrt(na) * std::sqrt(nb));
}

std::map<Emotion, double> per_emotion_accuracy(std::span<const Emotion> predicted, std::span<const Emotion> gold) {
  if (predicted.size() != gold.size())
    throw ValidationError("per_emotion_accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(gold.size()) + " gold labels");
  if (gold.empty()) throw ValidationError("per_emotion_accuracy: empty input");
  std::map<Emotion, std::pair<std::size_t, std::size_t>> tally;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto& [hit, total] = tally[gold[i]];
    ++total;
    if (predicted[i] == gold[i]) ++hit;
  }
  std::map<Emotion, double> out;
  for (const auto& [e, t] : tally) out[e] = static_cast<double>(t.first) / static_cast<double>(t.second);
  return out;
}

json MetricReport::to_json() const {
  json acc = json::object(), counts = json::object();
  for (const auto& [e, v] : per_category_accuracy) acc[std::string(emotion_name(e))] = v;
  for (const auto& [e, v] : category_counts) counts[std::string(emotion_name(e))] = v;
  return {{"emo_sim_percent", emo_sim_percent},
          {"dtw_cost", dtw_cost},
          {"overall_accuracy", overall_accuracy},
          {"per_category_accuracy", acc},
          {"category_counts", counts},
          {"n_utterances", n_utterances},
          {"n_words", n_words},
          {"trajectory_kind", trajectory_kind}};
}

MetricReport evaluate_corpus(std::span<const UtteranceEval> generated, std::span<const UtteranceEval> gold) {
  std::map<std::string, const UtteranceEval*> by_id;
  for (const auto& g : generated) by_id[g.utterance_id] = &g;
  std::vector<std::string> missing;
  std::vector<std::pair<const UtteranceEval*, const UtteranceEval*>> pairs;
  for (const auto& g : gold) {
    auto it = by_id.find(g.utterance_id);
    if (it == by_id.end()) missing.push_back(g.utterance_id);
    else pairs.emplace_back(it->second, &g);
  }
  if (generated.size() != pairs.size()) {
    std::map<std::string, bool> gold_ids;
    for (const auto& g : gold) gold_ids[g.utterance_id] = true;
    for (const auto& g : generated)
      if (!gold_ids.count(g.utterance_id)) missing.push_back(g.utterance_id);
  }
  if (!missing.empty()) {
    std::string msg = "evaluate_corpus: utterance ids without a counterpart:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  if (pairs.empty()) throw ValidationError("evaluate_corpus: no utterances");

  const auto n = static_cast<long long>(pairs.size());
  std::vector<double> dtws(pairs.size()), sims(pairs.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n; ++i) {
    try {
      const auto& [gen, ref] = pairs[static_cast<std::size_t>(i)];
      dtws[static_cast<std::size_t>(i)] = dtw(gen->trajectory, ref->trajectory);
      sims[static_cast<std::size_t>(i)] = emo_sim(gen->trajectory, ref->trajectory);
    } catch (...) {
#pragma omp critical(evaluate_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  MetricReport r;
  std::vector<Emotion> pred, ref;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    r.dtw_cost += dtws[i];
    r.emo_sim_percent += sims[i];
    const auto& [gen, g] = pairs[i];
    if (gen->word_categories.size() != g->word_categories.size())
      throw ValidationError("evaluate_corpus: word count mismatch for " + g->utterance_id);
    pred.insert(pred.end(), gen->word_categories.begin(), gen->word_categories.end());
    ref.insert(ref.end(), g->word_categories.begin(), g->word_categories.end());
  }
  r.n_utterances = pairs.size();
  r.dtw_cost /= static_cast<double>(pairs.size());
  r.emo_sim_percent /= static_cast<double>(pairs.size());
  r.n_words = ref.size();
  r.trajectory_kind = pairs.front().second->trajectory.kind;
  if (!ref.empty()) {
    r.per_category_accuracy = per_emotion_accuracy(pred, ref);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ++r.category_counts[ref[i]];
      hits += pred[i] == ref[i];
    }
    r.overall_accuracy = static_cast<double>(hits) / static_cast<double>(ref.size());
  }
  return r;
}

}  // namespace emofilm
