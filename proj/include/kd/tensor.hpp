// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with reverse-mode differentiation over a fixed operation set.
// Tensors are shared handles (copying a Tensor aliases its storage); a Tape
// records executed operations in define-by-run order and replays them in
// reverse on backward().
//
// Numeric contract: all compute is 64-bit. Every forward operation is
// bitwise deterministic and, for batched inputs, row-independent: row i of
// the output depends only on row i of the input and is computed by the same
// instruction sequence regardless of batch size. Reductions use a fixed
// left-to-right order.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "kd/errors.hpp"

namespace kd {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& s);
Index shape_numel(const Shape& s);

class Tensor {
 public:
  Tensor() = default;  // undefined handle

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  Index dim(int i) const;
  Index numel() const;

  // Storage accessors return mutable references through const handles,
  // mirroring the shared-pointer semantics of the handle itself.
  Eigen::ArrayXd& values() const;
  double* data() const;
  double item() const;  // numel() == 1 only

  bool requires_grad() const;
  void set_requires_grad(bool on) const;  // allocates/releases the grad buffer
  Eigen::ArrayXd& grad() const;           // requires requires_grad()
  void zero_grad() const;

  /// Deep copy of values (grad not copied).
  Tensor clone() const;

  std::uint64_t id() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
};

/// Ordered record of executed differentiable operations. Operations append
/// themselves during the forward pass, so the record is topologically sorted
/// by construction; backward() visits each node exactly once in reverse.
class Tape {
 public:
  using PullFn = std::function<void()>;

  void record(const Tensor& output, PullFn pull);
  bool produced(const Tensor& t) const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep, accumulating into
  /// the grad buffer of every requires_grad tensor reachable from loss.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::uint64_t output_id;
    PullFn pull;
  };
  std::vector<Node> nodes_;
  std::unordered_set<std::uint64_t> produced_;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

// ---------------------------------------------------------------------------
// Differentiable operations. Passing tape == nullptr runs in inference mode:
// nothing is recorded and outputs carry no grad, which is also how constants
// (e.g. teacher outputs) are detached from differentiation.
// ---------------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, double c);

/// The only broadcast in the op set: adds bias[F] to every row of x[B,F].
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias);

Tensor relu(Tape* tape, const Tensor& x);
Tensor gelu(Tape* tape, const Tensor& x);
Tensor exp(Tape* tape, const Tensor& x);
Tensor log(Tape* tape, const Tensor& x);  // strictly positive inputs

Tensor sum(Tape* tape, const Tensor& x);   // -> scalar
Tensor mean(Tape* tape, const Tensor& x);  // -> scalar

Tensor reshape(Tape* tape, const Tensor& x, Shape shape);

/// Row-wise log-softmax over the last dimension of x[B,C], computed with
/// max-subtraction.
Tensor log_softmax(Tape* tape, const Tensor& x);

/// out[i] = x[i, cols[i]] for x[B,C]; the gather used by the label losses.
Tensor pick_rows(Tape* tape, const Tensor& x, const std::vector<int>& cols);

/// Direct 2-D convolution, no padding: x[B,Ci,H,W] * w[Co,Ci,k,k] + b[Co].
Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b,
              Index stride);

/// Mean pooling over spatial dims of x[B,C,H,W]. kernel <= 0 pools globally
/// and returns [B,C]; otherwise returns [B,C,Ho,Wo].
Tensor mean_pool2d(Tape* tape, const Tensor& x, Index kernel, Index stride);

namespace detail {
/// Row kernel shared by log_softmax and the distillation loss: max-subtracted
/// log-softmax of one contiguous row of n values. Using one routine for both
/// callers guarantees identical inputs produce bitwise-identical rows.
void log_softmax_row(const double* x, double* out, Index n);
}  // namespace detail

}  // namespace kd
