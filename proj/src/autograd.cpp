#include "emofilm/autograd.hpp"

#include "emofilm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace emofilm::ag {

Matrix& Node::ensure_grad() {
  if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
  return grad;
}

double Var::scalar() const {
  if (value().size() != 1) throw std::logic_error("Var::scalar on " + value().shape_str());
  return value()(0, 0);
}

namespace {

using NodePtr = std::shared_ptr<Node>;

thread_local bool g_grad_enabled = true;

Var make(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void add_into(Matrix& dst, const Matrix& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// log-softmax of one row written into out.
void log_softmax_row(std::span<const double> x, std::span<double> out) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] - lse;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& loss) {
  require(loss.value().size() == 1, "backward: loss must be a scalar");
  if (!loss.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS so deep graphs do not blow the stack.
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->backward) n->ensure_grad().fill(0.0);
  loss.node()->ensure_grad()(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: " + a.value().shape_str() + " · " + b.value().shape_str());
  Matrix out;
  kernels::matmul(a.value(), b.value(), out);
  auto pa = a.shared(), pb = b.shared();
  return make(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) kernels::matmul_nt_acc(self.grad, pb->value, pa->ensure_grad());
    if (pb->requires_grad) kernels::matmul_tn_acc(pa->value, self.grad, pb->ensure_grad());
  });
}

Var add_bias(const Var& x, const Var& b) {
  require(b.rows() == 1 && b.cols() == x.cols(), "add_bias: shape mismatch");
  Matrix out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b.value()(0, c);
  auto px = x.shared(), pb = b.shared();
  return make(std::move(out), {px, pb}, [px, pb](Node& self) {
    if (px->requires_grad) add_into(px->ensure_grad(), self.grad);
    if (pb->requires_grad) {
      Matrix& g = pb->ensure_grad();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < self.grad.cols(); ++c) g(0, c) += self.grad(r, c);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix out = a.value();
  add_into(out, b.value());
  auto pa = a.shared(), pb = b.shared();
  return make(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) add_into(pa->ensure_grad(), self.grad);
    if (pb->requires_grad) add_into(pb->ensure_grad(), self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
  auto pa = a.shared(), pb = b.shared();
  return make(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    const std::size_t n = self.grad.size();
    if (pa->requires_grad) {
      double* g = pa->ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad.data()[i] * pb->value.data()[i];
    }
    if (pb->requires_grad) {
      double* g = pb->ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad.data()[i] * pa->value.data()[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= s;
  auto pa = a.shared();
  return make(std::move(out), {pa}, [pa, s](Node& self) {
    double* g = pa->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad.data()[i];
  });
}

Var gelu(const Var& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  Matrix out = x.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::tanh(kC * (v + 0.044715 * v * v * v)));
  auto px = x.shared();
  return make(std::move(out), {px}, [px](Node& self) {
    double* g = px->ensure_grad().data();
    const double* xv = px->value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kC * (v + 0.044715 * v * v * v));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * 0.044715 * v * v);
      g[i] += self.grad.data()[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Var sigmoid(const Var& x) {
  Matrix out = x.value();
  // Inputs clamped to ±30 keep the output strictly inside (0,1) in double.
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-std::clamp(v, -30.0, 30.0)));
  auto px = x.shared();
  Matrix y = out;
  return make(std::move(out), {px}, [px, y = std::move(y)](Node& self) {
    double* g = px->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = y.data()[i];
      g[i] += self.grad.data()[i] * s * (1.0 - s);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = x.rows(), d = x.cols();
  require(gain.rows() == 1 && gain.cols() == d && bias.value().same_shape(gain.value()),
          "layer_norm: parameter shape mismatch");
  Matrix xhat(n, d), out(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (double v : x.value().row(r)) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x.value().row(r)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (x.value()(r, c) - mu) * inv_std[r];
      out(r, c) = gain.value()(0, c) * xhat(r, c) + bias.value()(0, c);
    }
  }
  auto px = x.shared(), pg = gain.shared(), pb = bias.shared();
  return make(std::move(out), {px, pg, pb},
              [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                const std::size_t n = xhat.rows(), d = xhat.cols();
                if (pg->requires_grad || pb->requires_grad) {
                  Matrix& gg = pg->ensure_grad();
                  Matrix& gb = pb->ensure_grad();
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) {
                      gg(0, c) += self.grad(r, c) * xhat(r, c);
                      gb(0, c) += self.grad(r, c);
                    }
                }
                if (!px->requires_grad) return;
                Matrix& gx = px->ensure_grad();
                std::vector<double> dxhat(d);
                for (std::size_t r = 0; r < n; ++r) {
                  double mean_d = 0.0, mean_dx = 0.0;
                  for (std::size_t c = 0; c < d; ++c) {
                    dxhat[c] = self.grad(r, c) * pg->value(0, c);
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xhat(r, c);
                  }
                  mean_d /= static_cast<double>(d);
                  mean_dx /= static_cast<double>(d);
                  for (std::size_t c = 0; c < d; ++c)
                    gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                }
              });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool causal) {
  Matrix out;
  auto probs = std::make_shared<std::vector<double>>();
  kernels::attention_forward(q.value(), k.value(), v.value(), heads, causal, out, *probs);
  auto pq = q.shared(), pk = k.shared(), pv = v.shared();
  return make(std::move(out), {pq, pk, pv}, [pq, pk, pv, heads, causal, probs](Node& self) {
    // Gradients for inputs that do not need them go to scratch.
    Matrix sq, sk, sv;
    Matrix& dq = pq->requires_grad ? pq->ensure_grad() : (sq = Matrix(pq->value.rows(), pq->value.cols()));
    Matrix& dk = pk->requires_grad ? pk->ensure_grad() : (sk = Matrix(pk->value.rows(), pk->value.cols()));
    Matrix& dv = pv->requires_grad ? pv->ensure_grad() : (sv = Matrix(pv->value.rows(), pv->value.cols()));
    kernels::attention_backward(pq->value, pk->value, pv->value, heads, causal, *probs, self.grad,
                                dq, dk, dv);
  });
}

Var embedding(const Var& table, std::span<const int> indices) {
  const std::size_t d = table.cols();
  Matrix out(indices.size(), d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int idx = indices[r];
    require(idx >= 0 && static_cast<std::size_t>(idx) < table.rows(),
            "embedding: index " + std::to_string(idx) + " out of range");
    std::copy_n(table.value().row(static_cast<std::size_t>(idx)).data(), d, out.row(r).data());
  }
  auto pt = table.shared();
  std::vector<int> idx(indices.begin(), indices.end());
  return make(std::move(out), {pt}, [pt, idx = std::move(idx)](Node& self) {
    Matrix& g = pt->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(static_cast<std::size_t>(idx[r]), c) += self.grad(r, c);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "concat_cols: row mismatch");
  const std::size_t ca = a.cols(), cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.value().row(r).data(), ca, out.row(r).data());
    std::copy_n(b.value().row(r).data(), cb, out.row(r).data() + ca);
  }
  auto pa = a.shared(), pb = b.shared();
  return make(std::move(out), {pa, pb}, [pa, pb, ca, cb](Node& self) {
    for (std::size_t r = 0; r < self.grad.rows(); ++r) {
      if (pa->requires_grad)
        for (std::size_t c = 0; c < ca; ++c) pa->ensure_grad()(r, c) += self.grad(r, c);
      if (pb->requires_grad)
        for (std::size_t c = 0; c < cb; ++c) pb->ensure_grad()(r, c) += self.grad(r, ca + c);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.cols() == d, "concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, d);
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + offset * d);
    offset += p.rows();
    parents.push_back(p.shared());
  }
  auto ps = parents;
  return make(std::move(out), std::move(parents), [ps](Node& self) {
    std::size_t off = 0;
    for (const NodePtr& p : ps) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        double* g = p->ensure_grad().data();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad.data()[off + i];
      }
      off += n;
    }
  });
}

Var rows_mean(const Var& x, std::size_t lo, std::size_t hi) {
  require(lo < hi && hi <= x.rows(), "rows_mean: empty or out-of-range span");
  const std::size_t d = x.cols();
  const double inv = 1.0 / static_cast<double>(hi - lo);
  Matrix out(1, d);
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0.0;
    for (std::size_t r = lo; r < hi; ++r) s += x.value()(r, c);
    out(0, c) = s * inv;
  }
  auto px = x.shared();
  return make(std::move(out), {px}, [px, lo, hi, inv](Node& self) {
    Matrix& g = px->ensure_grad();
    for (std::size_t r = lo; r < hi; ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += self.grad(0, c) * inv;
  });
}

Var film(const Var& h, const Var& gamma_beta) {
  const std::size_t e = h.cols();
  require(gamma_beta.rows() == h.rows() && gamma_beta.cols() == 2 * e, "film: shape mismatch");
  Matrix out(h.rows(), e);
  for (std::size_t r = 0; r < h.rows(); ++r)
    for (std::size_t c = 0; c < e; ++c)
      out(r, c) = (1.0 + gamma_beta.value()(r, c)) * h.value()(r, c) + gamma_beta.value()(r, e + c);
  auto ph = h.shared(), pgb = gamma_beta.shared();
  return make(std::move(out), {ph, pgb}, [ph, pgb, e](Node& self) {
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < e; ++c) {
        const double g = self.grad(r, c);
        if (ph->requires_grad) ph->ensure_grad()(r, c) += g * (1.0 + pgb->value(r, c));
        if (pgb->requires_grad) {
          pgb->ensure_grad()(r, c) += g * ph->value(r, c);
          pgb->ensure_grad()(r, e + c) += g;
        }
      }
  });
}

Var smoothed_cross_entropy(std::span<const Var> logits, std::span<const std::vector<int>> targets,
                           double epsilon) {
  require(logits.size() == targets.size(), "cross entropy: batch size mismatch");
  require(epsilon >= 0.0 && epsilon < 1.0, "cross entropy: epsilon must be in [0,1)");
  std::size_t m = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    require(targets[i].size() <= logits[i].rows(), "cross entropy: more targets than logit rows");
    m += targets[i].size();
  }
  require(m > 0, "cross entropy: no non-padded positions");
  const double inv_m = 1.0 / static_cast<double>(m);

  double total = 0.0;
  std::vector<NodePtr> parents;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const Matrix& x = logits[i].value();
    const std::size_t k = x.cols();
    const double off = epsilon / static_cast<double>(k);
    std::vector<double> lp(k);
    for (std::size_t t = 0; t < targets[i].size(); ++t) {
      const int y = targets[i][t];
      require(y >= 0 && static_cast<std::size_t>(y) < k, "cross entropy: target out of range");
      log_softmax_row(x.row(t), lp);
      double row = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double q = (static_cast<int>(c) == y ? 1.0 - epsilon : 0.0) + off;
        row += q * lp[c];
      }
      total -= row;
    }
    parents.push_back(logits[i].shared());
  }
  auto ps = parents;
  std::vector<std::vector<int>> tg(targets.begin(), targets.end());
  return make(Matrix(1, 1, total * inv_m), std::move(parents),
              [ps, tg = std::move(tg), epsilon, inv_m](Node& self) {
                const double g = self.grad(0, 0) * inv_m;
                for (std::size_t i = 0; i < ps.size(); ++i) {
                  if (!ps[i]->requires_grad) continue;
                  Matrix& gx = ps[i]->ensure_grad();
                  const Matrix& x = ps[i]->value;
                  const std::size_t k = x.cols();
                  const double off = epsilon / static_cast<double>(k);
                  std::vector<double> lp(k);
                  for (std::size_t t = 0; t < tg[i].size(); ++t) {
                    log_softmax_row(x.row(t), lp);
                    for (std::size_t c = 0; c < k; ++c) {
                      const double q = (static_cast<int>(c) == tg[i][t] ? 1.0 - epsilon : 0.0) + off;
                      gx(t, c) += g * (std::exp(lp[c]) - q);
                    }
                  }
                }
              });
}

Var cross_entropy(std::span<const Var> logits, std::span<const std::vector<int>> targets) {
  require(logits.size() == targets.size(), "cross entropy: batch size mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    require(targets[i].size() <= logits[i].rows(), "cross entropy: more targets than logit rows");
    n += targets[i].size();
  }
  require(n > 0, "cross entropy: no non-padded positions");
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  std::vector<NodePtr> parents;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const Matrix& x = logits[i].value();
    std::vector<double> lp(x.cols());
    for (std::size_t t = 0; t < targets[i].size(); ++t) {
      const int y = targets[i][t];
      require(y >= 0 && static_cast<std::size_t>(y) < x.cols(), "cross entropy: target out of range");
      log_softmax_row(x.row(t), lp);
      total -= lp[static_cast<std::size_t>(y)];
    }
    parents.push_back(logits[i].shared());
  }
  auto ps = parents;
  std::vector<std::vector<int>> tg(targets.begin(), targets.end());
  return make(Matrix(1, 1, total * inv_n), std::move(parents), [ps, tg = std::move(tg), inv_n](Node& self) {
    const double g = self.grad(0, 0) * inv_n;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!ps[i]->requires_grad) continue;
      Matrix& gx = ps[i]->ensure_grad();
      const Matrix& x = ps[i]->value;
      std::vector<double> lp(x.cols());
      for (std::size_t t = 0; t < tg[i].size(); ++t) {
        log_softmax_row(x.row(t), lp);
        for (std::size_t c = 0; c < x.cols(); ++c)
          gx(t, c) += g * (std::exp(lp[c]) - (static_cast<int>(c) == tg[i][t] ? 1.0 : 0.0));
      }
    }
  });
}

Var mse(const Var& pred, std::span<const double> targets) {
  require(pred.cols() == 1 && pred.rows() == targets.size(), "mse: shape mismatch");
  require(!targets.empty(), "mse: empty input");
  const double inv = 1.0 / static_cast<double>(targets.size());
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = pred.value()(i, 0) - targets[i];
    s += d * d;
  }
  auto pp = pred.shared();
  std::vector<double> tg(targets.begin(), targets.end());
  return make(Matrix(1, 1, s * inv), {pp}, [pp, tg = std::move(tg), inv](Node& self) {
    Matrix& g = pp->ensure_grad();
    for (std::size_t i = 0; i < tg.size(); ++i)
      g(i, 0) += self.grad(0, 0) * 2.0 * inv * (pp->value(i, 0) - tg[i]);
  });
}

}  // namespace emofilm::ag
