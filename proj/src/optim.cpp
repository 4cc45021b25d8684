// SPDX-License-Identifier: Apache-2.0

#include "kd/optim.hpp"

#include <cmath>

namespace kd {

double lr_at(const CosineSchedule& schedule, long step) {
  if (schedule.total_steps < 1) {
    throw ConfigError("cosine schedule: total_steps must be >= 1, got " +
                      std::to_string(schedule.total_steps));
  }
  if (!(schedule.lr_max >= schedule.lr_min) || !(schedule.lr_min >= 0.0)) {
    throw ConfigError("cosine schedule: need lr_max >= lr_min >= 0");
  }
  if (step < 0 || step > schedule.total_steps) {
    throw ConfigError("cosine schedule: step " + std::to_string(step) +
                      " outside [0, " + std::to_string(schedule.total_steps) + "]");
  }
  if (step == 0) return schedule.lr_max;
  if (step == schedule.total_steps) return schedule.lr_min;
  const double phase = M_PI * static_cast<double>(step) /
                       static_cast<double>(schedule.total_steps);
  return schedule.lr_min +
         0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + std::cos(phase));
}

AdamW::AdamW(std::vector<ParamSlot> slots, double weight_decay)
    : slots_(std::move(slots)), weight_decay_(weight_decay) {
  if (weight_decay_ < 0.0) {
    throw ConfigError("adamw: weight_decay must be >= 0, got " +
                      std::to_string(weight_decay_));
  }
  m_.reserve(slots_.size());
  v_.reserve(slots_.size());
  for (const auto& slot : slots_) {
    if (!slot.param.defined() || !slot.param.requires_grad()) {
      throw ConfigError("adamw: listed parameter has no gradient buffer");
    }
    m_.push_back(Eigen::ArrayXd::Zero(slot.param.numel()));
    v_.push_back(Eigen::ArrayXd::Zero(slot.param.numel()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const Tensor& p = slots_[i].param;
    const Eigen::ArrayXd& g = p.grad();
    m_[i] = kAdamBeta1 * m_[i] + (1.0 - kAdamBeta1) * g;
    v_[i] = kAdamBeta2 * v_[i] + (1.0 - kAdamBeta2) * g * g;
    if (slots_[i].decay && weight_decay_ != 0.0) {
      p.values() *= 1.0 - lr * weight_decay_;
    }
    p.values() -= lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + kAdamEps);
  }
}

}  // namespace kd
