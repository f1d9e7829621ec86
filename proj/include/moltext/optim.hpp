//
// Project MolText - Copyright 2026 MolText Developers.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "moltext/error.hpp"
#include "moltext/tensor.hpp"

namespace moltext {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Decoupled decay updates the parameter directly (AdamW); otherwise the
  // decay term is folded into the gradient (plain Adam with L2).
  bool decoupled_decay = false;
};

/// Adam / AdamW over a fixed parameter list. Moment buffers are keyed by
/// position, so the list must not change between steps.
class Adam {
public:
  Adam(std::vector<Tensor> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params_[i].size()), 0.0);
      v_[i].assign(static_cast<std::size_t>(params_[i].size()), 0.0);
    }
  }

  void zero_grad() {
    for (Tensor &p: params_)
      p.zero_grad();
  }

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor &p = params_[i];
      std::vector<double> &value = p.data();
      const std::vector<double> &grad = p.grad();
      for (std::size_t j = 0; j < value.size(); ++j) {
        double g = grad[j];
        if (!cfg_.decoupled_decay && cfg_.weight_decay != 0.0)
          g += cfg_.weight_decay * value[j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        if (cfg_.decoupled_decay && cfg_.weight_decay != 0.0)
          value[j] -= cfg_.lr * cfg_.weight_decay * value[j];
        value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig &config() const { return cfg_; }

private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_count_ = 0;
};

}  // namespace moltext
