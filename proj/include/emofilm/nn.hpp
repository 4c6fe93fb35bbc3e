#pragma once

// Transformer building blocks over a ParameterSet. Each `add_*` registers
// parameters under a name prefix; the matching `apply_*` looks them up.

#include "emofilm/params.hpp"

#include <cstdint>
#include <string>

namespace emofilm::nn {

/// Weights N(0, 1/in), bias zero; `zero` leaves the weights at zero too.
void add_linear(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                std::uint64_t seed, bool zero = false);
ag::Var apply_linear(const ParameterSet& ps, const std::string& prefix, const ag::Var& x);

void add_layer_norm(ParameterSet& ps, const std::string& prefix, std::size_t dim);
ag::Var apply_layer_norm(const ParameterSet& ps, const std::string& prefix, const ag::Var& x);

/// Multi-head attention: q/k/v/o projections.
void add_attention(ParameterSet& ps, const std::string& prefix, std::size_t dim, std::uint64_t seed);
ag::Var apply_attention(const ParameterSet& ps, const std::string& prefix, const ag::Var& query,
                        const ag::Var& memory, std::size_t heads, bool causal);

/// Two-layer GELU feed-forward network.
void add_feed_forward(ParameterSet& ps, const std::string& prefix, std::size_t dim, std::size_t hidden,
                      std::uint64_t seed);
ag::Var apply_feed_forward(const ParameterSet& ps, const std::string& prefix, const ag::Var& x);

}  // namespace emofilm::nn
