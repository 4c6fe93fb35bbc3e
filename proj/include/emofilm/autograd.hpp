#pragma once

// Small reverse-mode automatic differentiation over dense double matrices.
//
// A `Var` is a handle to a node in a dynamically built graph. Nodes whose
// inputs never require gradients store no backward closure, so inference
// builds a cheap value-only graph.

#include "emofilm/matrix.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace emofilm::ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double scalar() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Matrix value);
/// Leaf that accumulates gradients across backward passes until zeroed.
Var leaf(Matrix value);

/// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
void backward(const Var& loss);

Var matmul(const Var& a, const Var& b);
/// x (n×m) plus row vector b (1×m) broadcast over rows.
Var add_bias(const Var& x, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var gelu(const Var& x);
/// Logistic function; saturates at inputs beyond ±30 so outputs stay in (0,1).
Var sigmoid(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool causal);
Var embedding(const Var& table, std::span<const int> indices);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(std::span<const Var> parts);
/// Mean of rows [lo, hi) as a 1×cols row.
Var rows_mean(const Var& x, std::size_t lo, std::size_t hi);
/// (1 + gb[:, :E]) ⊙ h + gb[:, E:], with E = h.cols().
Var film(const Var& h, const Var& gamma_beta);

/// −(1/M) Σ_rows Σ_k q(y,k) log softmax(row)_k with q = (1−ε)·onehot + ε/K.
/// `logits[i]` may carry extra (padding) rows past targets[i].size(); those
/// are ignored and excluded from M.
Var smoothed_cross_entropy(std::span<const Var> logits, std::span<const std::vector<int>> targets,
                           double epsilon);
/// −(1/N) Σ log softmax(row)_y over all non-padded rows.
Var cross_entropy(std::span<const Var> logits, std::span<const std::vector<int>> targets);
/// Mean squared error between an n×1 prediction and targets.
Var mse(const Var& pred, std::span<const double> targets);

}  // namespace emofilm::ag
