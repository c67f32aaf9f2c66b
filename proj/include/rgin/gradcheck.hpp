#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rgin/tensor.hpp"

namespace rgin {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::size_t refined = 0;  // entries whose step had to shrink to stay off a kink
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor so that entries whose true gradient is ~0 are judged on
  // absolute agreement instead of amplifying round-off.
  double floor = 1e-6;
  // A probe that lands on a different piece of a piecewise op than the base point
  // is retried with the step divided by 10, at most this many times.
  int max_refinements = 3;
};

/// Compares reverse-mode gradients of a scalar loss against central differences.
///
/// `loss_fn` must rebuild the whole forward graph on the tape it is given and must
/// be a pure function of the current values in `params`.
inline GradCheckResult check_gradients(
    std::string name, std::vector<Tensor<double>> params,
    const std::function<Tensor<double>(Tape<double>&)>& loss_fn, GradCheckOptions opt = {}) {
  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape(true, true);
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&](std::uint64_t* signature) {
    Tape<double> tape(false, true);
    tape.set_trace_branches(true);
    double v = loss_fn(tape).item();
    *signature = tape.branch_signature();
    return v;
  };
  std::uint64_t base = 0;
  eval(&base);
  GradCheckResult res{std::move(name)};
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      double step = opt.step, up = 0, down = 0;
      for (int attempt = 0;; ++attempt) {
        std::uint64_t s_up = 0, s_down = 0;
        values[i] = orig + step;
        up = eval(&s_up);
        values[i] = orig - step;
        down = eval(&s_down);
        values[i] = orig;
        if ((s_up == base && s_down == base) || attempt == opt.max_refinements) break;
        if (attempt == 0) ++res.refined;
        step /= 10;
      }
      const double numeric = (up - down) / (2 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++res.entries;
    }
  }
  res.passed = res.max_rel_error < opt.tolerance;
  return res;
}

}  // namespace rgin
