// SPDX-License-Identifier: Apache-2.0
//
// Classification and distillation objectives over [batch x classes] logits.
// All losses reduce by batch mean, so their magnitude is batch-size
// invariant. Teacher logits never receive gradients: the teacher is a fixed
// target, regardless of how its tensor was created.

#pragma once

#include <string>
#include <vector>

#include "kd/tensor.hpp"

namespace kd {

/// Which distribution leads the KL term of the distillation loss.
/// teacher_to_student is the classic soft-target loss with student-logit
/// gradient T*(p_s - p_t)/batch; student_to_teacher is the mirrored form.
enum class KlDirection {
  teacher_to_student,
  student_to_teacher,
};

const char* to_string(KlDirection d);
KlDirection kl_direction_from_string(const std::string& s);

struct DistillConfig {
  double temperature = 2.0;
  double alpha = 0.5;  // blend weight: (1-alpha)*label loss + alpha*distill loss
  KlDirection direction = KlDirection::teacher_to_student;

  void validate() const;  // ConfigError unless temperature > 0 and alpha in [0,1]
};

/// Temperature-softened softmax: rows of softmax(logits / T), max-subtracted.
Tensor softmax_T(Tape* tape, const Tensor& logits, double T);

/// Batch-mean negative log-likelihood of labels under softmax(logits).
/// Logit gradient is (softmax - onehot)/batch.
Tensor cross_entropy(Tape* tape, const Tensor& logits,
                     const std::vector<int>& labels);

/// Distillation loss: T^2 * batch-mean KL between the temperature-softened
/// student and teacher rows. Identical logits give a loss and gradient of
/// exactly 0.0 (both sides are softened by the same routine, so their terms
/// cancel bitwise).
Tensor kd_loss(Tape* tape, const Tensor& student_logits,
               const Tensor& teacher_logits, double T,
               KlDirection direction = KlDirection::teacher_to_student);

/// (1-alpha)*cross_entropy + alpha*kd_loss. At alpha == 0 this *is* the
/// cross_entropy call (same computation path, bitwise equal), and teacher
/// logits may be an undefined handle; at alpha == 1 it is the kd_loss call.
Tensor total_loss(Tape* tape, const Tensor& student_logits,
                  const Tensor& teacher_logits, const std::vector<int>& labels,
                  const DistillConfig& cfg);

}  // namespace kd
