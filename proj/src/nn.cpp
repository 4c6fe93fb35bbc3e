#include "emofilm/nn.hpp"

#include <cmath>

namespace emofilm::nn {

void add_linear(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                std::uint64_t seed, bool zero) {
  const double stddev = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
  ps.add(prefix + ".w", init_normal(in, out, stddev, seed, prefix + ".w"));
  ps.add(prefix + ".b", Matrix(1, out));
}

ag::Var apply_linear(const ParameterSet& ps, const std::string& prefix, const ag::Var& x) {
  return ag::linear(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"));
}

void add_layer_norm(ParameterSet& ps, const std::string& prefix, std::size_t dim) {
  ps.add(prefix + ".g", Matrix(1, dim, 1.0));
  ps.add(prefix + ".b", Matrix(1, dim));
}

ag::Var apply_layer_norm(const ParameterSet& ps, const std::string& prefix, const ag::Var& x) {
  return ag::layer_norm(x, ps.get(prefix + ".g"), ps.get(prefix + ".b"));
}

void add_attention(ParameterSet& ps, const std::string& prefix, std::size_t dim, std::uint64_t seed) {
  for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(ps, prefix + p, dim, dim, seed);
}

ag::Var apply_attention(const ParameterSet& ps, const std::string& prefix, const ag::Var& query,
                        const ag::Var& memory, std::size_t heads, bool causal) {
  const ag::Var q = apply_linear(ps, prefix + ".q", query);
  const ag::Var k = apply_linear(ps, prefix + ".k", memory);
  const ag::Var v = apply_linear(ps, prefix + ".v", memory);
  return apply_linear(ps, prefix + ".o", ag::attention(q, k, v, heads, causal));
}

void add_feed_forward(ParameterSet& ps, const std::string& prefix, std::size_t dim, std::size_t hidden,
                      std::uint64_t seed) {
  add_linear(ps, prefix + ".up", dim, hidden, seed);
  add_linear(ps, prefix + ".down", hidden, dim, seed);
}

ag::Var apply_feed_forward(const ParameterSet& ps, const std::string& prefix, const ag::Var& x) {
  return apply_linear(ps, prefix + ".down", ag::gelu(apply_linear(ps, prefix + ".up", x)));
}

}  // namespace emofilm::nn
