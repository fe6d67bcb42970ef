#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nextscale/tensor.hpp"

namespace nextscale {

template <typename T>
struct AdamWConfig {
  T lr = T(1e-4);
  T beta1 = T(0.95);
  T beta2 = T(0.95);
  T weight_decay = T(0.05);
  T epsilon = T(1e-8);
};

// Adaptive-moment optimizer with bias correction and decoupled weight
// decay. Grads are left untouched; the caller zeroes them.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig<T> config = {}) : config_(config) {}

  void register_param(const std::string& name, Tensor<T> param) {
    params_.emplace_back(name, std::move(param));
    first_moment_.emplace_back(params_.back().second.numel(), T(0));
    second_moment_.emplace_back(params_.back().second.numel(), T(0));
  }

  int64_t step_count() const { return step_count_; }
  const AdamWConfig<T>& config() const { return config_; }
  AdamWConfig<T>& config() { return config_; }

  void zero_grads() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step() {
    ++step_count_;
    const T bc1 = T(1) - std::pow(config_.beta1, static_cast<T>(step_count_));
    const T bc2 = T(1) - std::pow(config_.beta2, static_cast<T>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& [name, p] = params_[i];
      if (!p.has_grad()) {
        throw std::logic_error("optimizer_step: parameter '" + name +
                               "' has no gradient");
      }
      const std::vector<T>& g = p.grad();
      std::vector<T>& w = p.values();
      std::vector<T>& m = first_moment_[i];
      std::vector<T>& v = second_moment_[i];
      for (size_t j = 0; j < w.size(); ++j) {
        const T w_old = w[j];
        m[j] = config_.beta1 * m[j] + (T(1) - config_.beta1) * g[j];
        v[j] = config_.beta2 * v[j] + (T(1) - config_.beta2) * g[j] * g[j];
        const T m_hat = m[j] / bc1;
        const T v_hat = v[j] / bc2;
        w[j] = w_old -
               config_.lr * (m_hat / (std::sqrt(v_hat) + config_.epsilon) +
                             config_.weight_decay * w_old);
      }
    }
  }

 private:
  AdamWConfig<T> config_;
  int64_t step_count_ = 0;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::vector<T>> first_moment_;
  std::vector<std::vector<T>> second_moment_;
};

}  // namespace nextscale
