#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "prodemb/rng.hpp"
#include "prodemb/tensor.hpp"

namespace prodemb::testutil {

inline void fill_random(const Tensor& t, Rng& rng, double scale = 1.0) {
  for (double& v : t->data) v = rng.normal(0.0, scale);
}

inline double rel_err(double a, double b) {
  double m = std::max(std::abs(a), std::abs(b));
  if (m < 1e-7) return 0.0;  // both effectively zero
  return std::abs(a - b) / m;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  size_t checked = 0;
  std::string worst;
};

// Central finite differences against tape gradients. forward must rebuild the
// graph from the current parameter values on every call. coords_per_tensor = 0
// checks every coordinate.
inline GradCheckResult check_gradients(const std::vector<Tensor>& params,
                                       const std::function<Tensor(Tape&)>& forward,
                                       Rng& coord_rng, size_t coords_per_tensor = 0,
                                       double h = 1e-5) {
  for (const auto& p : params) p->zero_grad();
  Tape tape;
  Tensor loss = forward(tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params)
    analytic.push_back(p->grad.empty() ? std::vector<double>(p->numel(), 0.0) : p->grad);

  auto eval = [&]() {
    Tape t2;
    NoGradGuard ng(t2);
    return forward(t2)->scalar();
  };

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    TensorNode& p = *params[pi];
    std::vector<size_t> coords;
    if (coords_per_tensor == 0 || coords_per_tensor >= p.numel()) {
      coords.resize(p.numel());
      for (size_t i = 0; i < p.numel(); ++i) coords[i] = i;
    } else {
      for (size_t c = 0; c < coords_per_tensor; ++c)
        coords.push_back(static_cast<size_t>(coord_rng.below(p.numel())));
    }
    for (size_t j : coords) {
      double saved = p.data[j];
      p.data[j] = saved + h;
      double lp = eval();
      p.data[j] = saved - h;
      double lm = eval();
      p.data[j] = saved;
      double fd = (lp - lm) / (2.0 * h);
      double err = rel_err(analytic[pi][j], fd);
      ++res.checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = p.name + "[" + std::to_string(j) + "] analytic " +
                    std::to_string(analytic[pi][j]) + " fd " + std::to_string(fd);
      }
    }
  }
  return res;
}

}  // namespace prodemb::testutil
