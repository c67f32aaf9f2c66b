#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rgin/checkpoint.hpp"
#include "rgin/nn.hpp"

namespace rgin {

/// Step learning-rate schedule: base * 0.5^floor(epoch / every), epochs counted from 0.
inline double step_lr(double base, std::size_t epoch, std::size_t every) {
  return base * std::ldexp(1.0, -static_cast<int>(epoch / every));
}

template <class T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  };

  Adam(ParamSet<T> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& [_, t] : params_.params) {
      m_.emplace_back(t.size(), T(0));
      v_.emplace_back(t.size(), T(0));
    }
  }

  std::size_t steps() const { return t_; }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step_size = static_cast<T>(lr / c1), inv_c2 = static_cast<T>(1.0 / c2), eps = static_cast<T>(opt_.eps);
    for (std::size_t p = 0; p < params_.params.size(); ++p) {
      auto& t = params_.params[p].second;
      auto w = t.mutable_data();
      auto g = t.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto& [_, t] : params_.params) t.zero_grad();
  }

  void save(Checkpoint& c) const {
    for (std::size_t p = 0; p < params_.params.size(); ++p) {
      const auto& [name, t] = params_.params[p];
      c.add("adam.m." + name, t.shape(), {m_[p].begin(), m_[p].end()});
      c.add("adam.v." + name, t.shape(), {v_[p].begin(), v_[p].end()});
    }
    c.add("adam.step", Shape{2}, {static_cast<float>(t_ >> 24), static_cast<float>(t_ & 0xffffff)});
  }

  void load(const Checkpoint& c) {
    for (std::size_t p = 0; p < params_.params.size(); ++p) {
      const auto& name = params_.params[p].first;
      const auto& m = c.at("adam.m." + name);
      const auto& v = c.at("adam.v." + name);
      if (m.data.size() != m_[p].size() || v.data.size() != v_[p].size())
        throw CheckpointError("optimizer state for '" + name + "' has the wrong size");
      std::copy(m.data.begin(), m.data.end(), m_[p].begin());
      std::copy(v.data.begin(), v.data.end(), v_[p].begin());
    }
    const auto& s = c.at("adam.step");
    t_ = (static_cast<std::size_t>(s.data.at(0)) << 24) + static_cast<std::size_t>(s.data.at(1));
  }

 private:
  ParamSet<T> params_;
  Options opt_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace rgin
