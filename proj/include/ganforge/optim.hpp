#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ganforge/blocks.hpp"

namespace ganforge {

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments and step counts are kept per
/// parameter name, so parameters added by progressive growing start fresh.
template <class T>
class Adam {
 public:
  struct Slot {
    Tensor<T> m;
    Tensor<T> v;
    std::int64_t steps = 0;
  };

  Adam() = default;
  explicit Adam(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  void set_config(const OptimizerConfig& cfg) { cfg_ = cfg; }

  /// Applies one update to each named parameter from its gradient.
  void step(ParameterStore<T>& params, const std::vector<std::string>& names, const std::vector<Tensor<T>>& grads) {
    if (names.size() != grads.size()) throw Error("adam: names/gradients count mismatch");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!all_finite(grads[i])) throw Error("adam: non-finite gradient for " + names[i]);
    }
    for (std::size_t i = 0; i < names.size(); ++i) update(params.at(names[i]).mutable_value(), names[i], grads[i]);
  }

  /// Single-tensor form of the update.
  void update(Tensor<T>& param, const std::string& name, const Tensor<T>& g) {
    if (param.shape() != g.shape()) {
      throw Error("adam: gradient shape " + to_string(g.shape()) + " does not match parameter " + name + " " +
                  to_string(param.shape()));
    }
    auto& s = slots_[name];
    if (s.m.shape() != param.shape()) {
      s.m = Tensor<T>(param.shape());
      s.v = Tensor<T>(param.shape());
      s.steps = 0;
    }
    ++s.steps;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.learning_rate), eps = static_cast<T>(cfg_.epsilon);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(s.steps)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(s.steps)));
    T* p = param.ptr();
    T* m = s.m.ptr();
    T* v = s.v.ptr();
    const T* gp = g.ptr();
    for (std::int64_t j = 0; j < param.size(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * gp[j];
      v[j] = b2 * v[j] + (T{1} - b2) * gp[j] * gp[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::map<std::string, Slot>& slots() { return slots_; }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, Slot> slots_;
};

}  // namespace ganforge
