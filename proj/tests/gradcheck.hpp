#pragma once

// Central finite-difference gradient checking against the autograd engine.

#include "emofilm/autograd.hpp"
#include "emofilm/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor); the floor keeps zero gradients from
// dividing rounding noise by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult grad_check(std::vector<std::pair<std::string, emofilm::ag::Var>> leaves,
                                  const std::function<emofilm::ag::Var()>& loss, double step = 1e-5) {
  using namespace emofilm;
  for (auto& [name, v] : leaves) v.node()->ensure_grad().fill(0.0);
  ag::backward(loss());
  GradCheckResult r;
  for (auto& [name, v] : leaves) {
    const Matrix analytic = v.grad();
    for (std::size_t i = 0; i < v.value().size(); ++i) {
      double& x = v.mutable_value().data()[i];
      const double saved = x;
      x = saved + step;
      double up, down;
      {
        ag::NoGradGuard g;
        up = loss().scalar();
      }
      x = saved - step;
      {
        ag::NoGradGuard g;
        down = loss().scalar();
      }
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic.data()[i], numeric);
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = name + "[" + std::to_string(i) + "]";
      }
      ++r.checked;
    }
  }
  return r;
}

inline GradCheckResult grad_check(emofilm::ParameterSet& ps, const std::function<emofilm::ag::Var()>& loss,
                                  double step = 1e-5) {
  std::vector<std::pair<std::string, emofilm::ag::Var>> leaves(ps.items().begin(), ps.items().end());
  return grad_check(leaves, loss, step);
}
