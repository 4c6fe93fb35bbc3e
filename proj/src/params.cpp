#include "emofilm/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace emofilm {

ParameterSet::ParameterSet(const ParameterSet& other) {
  for (const auto& [name, var] : other.items_) add(name, var.value());
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    ParameterSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

ag::Var& ParameterSet::add(const std::string& name, Matrix init) {
  if (contains(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, ag::leaf(std::move(init)));
  return items_.back().second;
}

const ag::Var& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return items_[it->second].second;
}

void ParameterSet::zero_grad() {
  for (auto& [name, var] : items_) var.node()->ensure_grad().fill(0.0);
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& [name, var] : items_) n += var.value().size();
  return n;
}

double ParameterSet::norm() const {
  double s = 0.0;
  for (const auto& [name, var] : items_)
    for (double v : var.value().values()) s += v * v;
  return std::sqrt(s);
}

std::map<std::string, std::size_t> ParameterSet::group_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& [name, var] : items_) out[name.substr(0, name.find('.'))] += var.value().size();
  return out;
}

nlohmann::json ParameterSet::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, var] : items_) j[name] = var.value().to_rows();
  return j;
}

void ParameterSet::load_json(const nlohmann::json& params) {
  for (auto& [name, var] : items_) {
    if (!params.contains(name)) throw std::runtime_error("checkpoint is missing parameter " + name);
    const auto rows = params.at(name).get<std::vector<std::vector<double>>>();
    Matrix m = Matrix::from_rows(rows);
    if (!m.same_shape(var.value()))
      throw std::runtime_error("parameter " + name + " has shape " + m.shape_str() + ", expected " +
                               var.value().shape_str());
    var.mutable_value() = std::move(m);
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  // FNV-1a over the label, then a splitmix64 finalizer mixed with the seed.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Matrix init_normal(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed,
                   const std::string& name) {
  Matrix m(rows, cols);
  if (stddev == 0.0) return m;
  std::mt19937_64 rng(derive_seed(seed, name));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Adam::Adam(ParameterSet& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, var] : params_.items()) {
    m_.emplace_back(var.value().rows(), var.value().cols());
    v_.emplace_back(var.value().rows(), var.value().cols());
  }
}

double Adam::step() {
  double sq = 0.0;
  for (auto& [name, var] : params_.items())
    for (double g : var.node()->ensure_grad().values()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  auto& items = params_.items();
  for (std::size_t p = 0; p < items.size(); ++p) {
    Matrix& w = items[p].second.mutable_value();
    const Matrix& g = items[p].second.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.data()[i] * clip;
      double& m = m_[p].data()[i];
      double& v = v_[p].data()[i];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gi;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gi * gi;
      w.data()[i] -= cfg_.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg_.epsilon);
    }
  }
  return norm;
}

}  // namespace emofilm
