// SPDX-License-Identifier: Apache-2.0

#include "kd/losses.hpp"

#include <cmath>

namespace kd {

const char* to_string(KlDirection d) {
  return d == KlDirection::teacher_to_student ? "teacher_to_student"
                                              : "student_to_teacher";
}

KlDirection kl_direction_from_string(const std::string& s) {
  if (s == "teacher_to_student") return KlDirection::teacher_to_student;
  if (s == "student_to_teacher") return KlDirection::student_to_teacher;
  throw ConfigError("kl_direction: expected teacher_to_student or "
                    "student_to_teacher, got \"" + s + "\"");
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) {
    throw ConfigError("distill config: temperature must be > 0, got " +
                      std::to_string(temperature));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("distill config: alpha must be in [0, 1], got " +
                      std::to_string(alpha));
  }
}

Tensor softmax_T(Tape* tape, const Tensor& logits, double T) {
  if (!(T > 0.0)) {
    throw ConfigError("softmax_T: temperature must be > 0, got " + std::to_string(T));
  }
  return exp(tape, log_softmax(tape, scale(tape, logits, 1.0 / T)));
}

Tensor cross_entropy(Tape* tape, const Tensor& logits,
                     const std::vector<int>& labels) {
  if (!logits.defined() || logits.rank() != 2) {
    throw ShapeError("cross_entropy: expected [batch x classes] logits");
  }
  const double batch = static_cast<double>(logits.dim(0));
  Tensor picked = pick_rows(tape, log_softmax(tape, logits), labels);
  return scale(tape, sum(tape, picked), -1.0 / batch);
}

Tensor kd_loss(Tape* tape, const Tensor& student_logits,
               const Tensor& teacher_logits, double T, KlDirection direction) {
  if (!(T > 0.0)) {
    throw ConfigError("kd_loss: temperature must be > 0, got " + std::to_string(T));
  }
  if (!student_logits.defined() || !teacher_logits.defined() ||
      student_logits.rank() != 2 || teacher_logits.rank() != 2) {
    throw ShapeError("kd_loss: expected [batch x classes] logits");
  }
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("kd_loss: student " + shape_str(student_logits.shape()) +
                     " vs teacher " + shape_str(teacher_logits.shape()));
  }
  const Index batch = student_logits.dim(0);
  const Index classes = student_logits.dim(1);
  const double inv_T = 1.0 / T;

  // Soften both sides with the same row kernel. When the two logit rows are
  // bitwise equal, ls == lt elementwise and every (lt - ls) term is exactly
  // 0.0, so the loss and the gradient below are exact zeros, not tiny sums.
  Eigen::ArrayXd ls(batch * classes), lt(batch * classes);
  std::vector<double> zrow(static_cast<std::size_t>(classes));
  double acc = 0.0;
  {
    const double* zs = student_logits.data();
    const double* zt = teacher_logits.data();
    for (Index i = 0; i < batch; ++i) {
      for (Index j = 0; j < classes; ++j) {
        zrow[static_cast<std::size_t>(j)] = zs[i * classes + j] * inv_T;
      }
      detail::log_softmax_row(zrow.data(), ls.data() + i * classes, classes);
      for (Index j = 0; j < classes; ++j) {
        zrow[static_cast<std::size_t>(j)] = zt[i * classes + j] * inv_T;
      }
      detail::log_softmax_row(zrow.data(), lt.data() + i * classes, classes);
      double row = 0.0;
      if (direction == KlDirection::teacher_to_student) {
        for (Index j = 0; j < classes; ++j) {
          row += std::exp(lt(i * classes + j)) *
                 (lt(i * classes + j) - ls(i * classes + j));
        }
      } else {
        for (Index j = 0; j < classes; ++j) {
          row += std::exp(ls(i * classes + j)) *
                 (ls(i * classes + j) - lt(i * classes + j));
        }
      }
      acc += row;
    }
  }
  Tensor out = Tensor::zeros({1});
  out.values()(0) = (T * T / static_cast<double>(batch)) * acc;

  if (tape != nullptr && student_logits.requires_grad()) {
    out.set_requires_grad(true);
    // teacher_to_student: d z_s = g * T/batch * (p_s - p_t).
    // student_to_teacher: d z_s = g * T/batch * p_s * ((ls - lt) - row KL).
    tape->record(out, [student_logits, out, ls = std::move(ls),
                       lt = std::move(lt), batch, classes, T, direction] {
      const double coef = out.grad()(0) * T / static_cast<double>(batch);
      double* gs = student_logits.grad().data();
      if (direction == KlDirection::teacher_to_student) {
        for (Index i = 0; i < batch * classes; ++i) {
          gs[i] += coef * (std::exp(ls(i)) - std::exp(lt(i)));
        }
      } else {
        for (Index i = 0; i < batch; ++i) {
          double row_kl = 0.0;
          for (Index j = 0; j < classes; ++j) {
            row_kl += std::exp(ls(i * classes + j)) *
                      (ls(i * classes + j) - lt(i * classes + j));
          }
          for (Index j = 0; j < classes; ++j) {
            const Index idx = i * classes + j;
            gs[idx] += coef * std::exp(ls(idx)) * ((ls(idx) - lt(idx)) - row_kl);
          }
        }
      }
    });
  }
  return out;
}

Tensor total_loss(Tape* tape, const Tensor& student_logits,
                  const Tensor& teacher_logits, const std::vector<int>& labels,
                  const DistillConfig& cfg) {
  cfg.validate();
  if (cfg.alpha == 0.0) {
    return cross_entropy(tape, student_logits, labels);
  }
  if (!teacher_logits.defined()) {
    throw ConfigError("total_loss: alpha > 0 requires teacher logits");
  }
  if (cfg.alpha == 1.0) {
    return kd_loss(tape, student_logits, teacher_logits, cfg.temperature,
                   cfg.direction);
  }
  Tensor ce = cross_entropy(tape, student_logits, labels);
  Tensor kdl = kd_loss(tape, student_logits, teacher_logits, cfg.temperature,
                       cfg.direction);
  return add(tape, scale(tape, ce, 1.0 - cfg.alpha),
             scale(tape, kdl, cfg.alpha));
}

}  // namespace kd
