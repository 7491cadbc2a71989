#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tmn/tensor.hpp"

namespace tmn {

template <typename T>
struct AdamConfig {
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// Bias-corrected Adam over a fixed set of registered parameters.
// Moments are zero-initialized and shape-locked to their parameter.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig<T> cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= T(0)) throw std::invalid_argument("adam: lr must be positive");
    if (cfg_.beta1 <= T(0) || cfg_.beta1 >= T(1) || cfg_.beta2 <= T(0) || cfg_.beta2 >= T(1))
      throw std::invalid_argument("adam: betas must lie in (0,1)");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  int64_t step_count() const { return step_count_; }
  const AdamConfig<T>& config() const { return cfg_; }
  void set_lr(T lr) {
    if (lr <= T(0)) throw std::invalid_argument("adam: lr must be positive");
    cfg_.lr = lr;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // One bias-corrected update from the grads currently on the parameters.
  // Parameters without an allocated grad are treated as zero-gradient.
  void step() {
    ++step_count_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_count_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_count_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (static_cast<int64_t>(m_[k].size()) != p.size())
        throw std::invalid_argument("adam: moment/parameter shape mismatch at index " + std::to_string(k));
      const std::vector<T>& g = p.grad();
      T* pm = m_[k].data();
      T* pv = v_[k].data();
      T* pw = p.data();
      const int64_t n = p.size();
      for (int64_t i = 0; i < n; ++i) {
        const T gi = g[static_cast<size_t>(i)];
        pm[i] = cfg_.beta1 * pm[i] + (T(1) - cfg_.beta1) * gi;
        pv[i] = cfg_.beta2 * pv[i] + (T(1) - cfg_.beta2) * gi * gi;
        const T mhat = pm[i] / bc1;
        const T vhat = pv[i] / bc2;
        pw[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamConfig<T> cfg_;
  int64_t step_count_ = 0;
};

}  // namespace tmn
