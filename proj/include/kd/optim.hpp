// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay, and the per-step cosine learning-rate
// schedule. Decay is applied multiplicatively before the moment update term
// (theta *= 1 - lr*wd), so a parameter with zero gradient follows the pure
// decay law exactly, with no additive rounding residue.

#pragma once

#include <vector>

#include "kd/tensor.hpp"

namespace kd {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct CosineSchedule {
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  long total_steps = 0;
};

/// Cosine interpolation lr_min + 0.5*(lr_max-lr_min)*(1 + cos(pi*step/total)).
/// The endpoints return lr_max and lr_min exactly (no trigonometric residue).
double lr_at(const CosineSchedule& schedule, long step);

/// One optimizer slot: the parameter tensor plus whether decoupled weight
/// decay applies to it (weights yes, biases no).
struct ParamSlot {
  Tensor param;
  bool decay = true;
};

class AdamW {
 public:
  /// Every slot must require gradients; frozen parameters are simply not
  /// listed. weight_decay < 0 is rejected.
  AdamW(std::vector<ParamSlot> slots, double weight_decay);

  /// Applies one update from the gradients currently held by the parameters:
  /// m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2, then with bias-corrected
  /// mhat, vhat: theta <- theta*(1 - lr*wd) - lr*mhat/(sqrt(vhat) + eps).
  void step(double lr);

  long step_count() const { return t_; }
  std::size_t slot_count() const { return slots_.size(); }

 private:
  std::vector<ParamSlot> slots_;
  std::vector<Eigen::ArrayXd> m_, v_;
  double weight_decay_;
  long t_ = 0;
};

}  // namespace kd
