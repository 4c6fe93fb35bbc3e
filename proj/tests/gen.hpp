#pragma once

// Hand-rolled random generators for property tests.

#include "emofilm/matrix.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

struct Rng {
  std::mt19937_64 engine;

  explicit Rng(std::uint64_t seed) : engine(seed) {}

  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(engine); }

  template <typename T>
  T pick(std::initializer_list<T> xs) {
    return *(xs.begin() + uniform_int(0, static_cast<int>(xs.size()) - 1));
  }

  emofilm::Matrix matrix(std::size_t rows, std::size_t cols, double scale = 1.0) {
    emofilm::Matrix m(rows, cols);
    for (double& v : m.values()) v = uniform(-scale, scale);
    return m;
  }

  std::vector<int> ints(std::size_t n, int lo, int hi) {
    std::vector<int> out(n);
    for (int& v : out) v = uniform_int(lo, hi);
    return out;
  }
};
