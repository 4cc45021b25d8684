// SPDX-License-Identifier: Apache-2.0

#include "kd/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <utility>

namespace kd {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ConfigError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

bool want_grad(Tape* tape, const Tensor& t) {
  return tape != nullptr && t.requires_grad();
}

}  // namespace

namespace detail {

void log_softmax_row(const double* x, double* out, Index n) {
  double m = x[0];
  for (Index j = 1; j < n; ++j) {
    if (x[j] > m) m = x[j];
  }
  double s = 0.0;
  for (Index j = 0; j < n; ++j) s += std::exp(x[j] - m);
  const double lse = m + std::log(s);
  for (Index j = 0; j < n; ++j) out[j] = x[j] - lse;
}

}  // namespace detail

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

struct Tensor::Impl {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // size 0 unless requires_grad
  bool requires_grad = false;
  std::uint64_t id = 0;
};

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dim in " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = Eigen::ArrayXd::Zero(shape_numel(impl->shape));
  impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  Tensor t(std::move(impl));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::constant(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  t.values().setConstant(value);
  return t;
}

Tensor Tensor::scalar(double value) { return constant({1}, value); }

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  if (static_cast<Index>(values.size()) != t.numel()) {
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(t.shape()));
  }
  for (Index i = 0; i < t.numel(); ++i) t.values()(i) = values[static_cast<std::size_t>(i)];
  return t;
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

Index Tensor::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size())) {
    throw ShapeError("dim: index " + std::to_string(i) + " for " + shape_str(s));
  }
  return s[static_cast<std::size_t>(i)];
}

Index Tensor::numel() const {
  require_defined(*this, "numel");
  return impl_->value.size();
}

Eigen::ArrayXd& Tensor::values() const {
  require_defined(*this, "values");
  return impl_->value;
}

double* Tensor::data() const { return values().data(); }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
  }
  return impl_->value(0);
}

bool Tensor::requires_grad() const {
  require_defined(*this, "requires_grad");
  return impl_->requires_grad;
}

void Tensor::set_requires_grad(bool on) const {
  require_defined(*this, "set_requires_grad");
  if (on && !impl_->requires_grad) {
    impl_->grad = Eigen::ArrayXd::Zero(impl_->value.size());
  } else if (!on) {
    impl_->grad.resize(0);
  }
  impl_->requires_grad = on;
}

Eigen::ArrayXd& Tensor::grad() const {
  require_defined(*this, "grad");
  if (!impl_->requires_grad) {
    throw ConfigError("grad: tensor does not require gradients");
  }
  return impl_->grad;
}

void Tensor::zero_grad() const { grad().setZero(); }

Tensor Tensor::clone() const {
  Tensor t = zeros(shape());
  t.values() = values();
  return t;
}

std::uint64_t Tensor::id() const {
  require_defined(*this, "id");
  return impl_->id;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::record(const Tensor& output, PullFn pull) {
  nodes_.push_back(Node{output.id(), std::move(pull)});
  produced_.insert(output.id());
}

bool Tape::produced(const Tensor& t) const {
  return t.defined() && produced_.count(t.id()) > 0;
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (!produced(loss)) {
    throw ConfigError("backward: loss was not produced on this tape");
  }
  loss.grad()(0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  {
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = out.data();
    // Row-i output accumulates over l in fixed order; independent of m.
    for (Index i = 0; i < m; ++i) {
      const double* arow = pa + i * k;
      double* crow = pc + i * n;
      for (Index l = 0; l < k; ++l) {
        const double av = arow[l];
        const double* brow = pb + l * n;
        for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  if (want_grad(tape, a) || want_grad(tape, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out, m, k, n] {
      const double* g = out.grad().data();
      if (a.requires_grad()) {
        double* ga = a.grad().data();
        const double* pb = b.data();
        for (Index i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (Index l = 0; l < k; ++l) {
            const double* brow = pb + l * n;
            double s = 0.0;
            for (Index j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + l] += s;
          }
        }
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        const double* pa = a.data();
        for (Index i = 0; i < m; ++i) {
          const double* arow = pa + i * k;
          const double* grow = g + i * n;
          for (Index l = 0; l < k; ++l) {
            const double av = arow[l];
            double* gbrow = gb + l * n;
            for (Index j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() + b.values();
  if (want_grad(tape, a) || want_grad(tape, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out] {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() += out.grad();
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() - b.values();
  if (want_grad(tape, a) || want_grad(tape, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out] {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() -= out.grad();
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() * b.values();
  if (want_grad(tape, a) || want_grad(tape, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out] {
      if (a.requires_grad()) a.grad() += out.grad() * b.values();
      if (b.requires_grad()) b.grad() += out.grad() * a.values();
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
  require_defined(x, "scale");
  Tensor out = Tensor::zeros(x.shape());
  out.values() = x.values() * c;
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out, c] { x.grad() += out.grad() * c; });
  }
  return out;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(bias.shape()));
  }
  const Index rows = x.dim(0), cols = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* px = x.data();
    const double* pb = bias.data();
    double* po = out.data();
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) po[i * cols + j] = px[i * cols + j] + pb[j];
    }
  }
  if (want_grad(tape, x) || want_grad(tape, bias)) {
    out.set_requires_grad(true);
    tape->record(out, [x, bias, out, rows, cols] {
      const double* g = out.grad().data();
      if (x.requires_grad()) x.grad() += out.grad();
      if (bias.requires_grad()) {
        double* gb = bias.grad().data();
        for (Index i = 0; i < rows; ++i) {
          for (Index j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
  require_defined(x, "relu");
  Tensor out = Tensor::zeros(x.shape());
  out.values() = x.values().max(0.0);
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out] {
      x.grad() += (x.values() > 0.0).select(out.grad(), 0.0);
    });
  }
  return out;
}

Tensor gelu(Tape* tape, const Tensor& x) {
  require_defined(x, "gelu");
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* px = x.data();
    double* po = out.data();
    for (Index i = 0; i < x.numel(); ++i) {
      po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * inv_sqrt2));
    }
  }
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out] {
      const double* px = x.data();
      const double* g = out.grad().data();
      double* gx = x.grad().data();
      for (Index i = 0; i < x.numel(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(px[i] * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * px[i] * px[i]);
        gx[i] += g[i] * (cdf + px[i] * pdf);
      }
    });
  }
  return out;
}

Tensor exp(Tape* tape, const Tensor& x) {
  require_defined(x, "exp");
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* px = x.data();
    double* po = out.data();
    for (Index i = 0; i < x.numel(); ++i) po[i] = std::exp(px[i]);
  }
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out] { x.grad() += out.grad() * out.values(); });
  }
  return out;
}

Tensor log(Tape* tape, const Tensor& x) {
  require_defined(x, "log");
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* px = x.data();
    double* po = out.data();
    for (Index i = 0; i < x.numel(); ++i) {
      if (!(px[i] > 0.0)) {
        throw NumericError("log: non-positive input " + std::to_string(px[i]) +
                           " at index " + std::to_string(i));
      }
      po[i] = std::log(px[i]);
    }
  }
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out] { x.grad() += out.grad() / x.values(); });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  require_defined(x, "sum");
  Tensor out = Tensor::zeros({1});
  {
    const double* px = x.data();
    double s = 0.0;
    for (Index i = 0; i < x.numel(); ++i) s += px[i];
    out.values()(0) = s;
  }
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out] { x.grad() += out.grad()(0); });
  }
  return out;
}

Tensor mean(Tape* tape, const Tensor& x) {
  require_defined(x, "mean");
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(Tape* tape, const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out = Tensor::zeros(std::move(shape));
  out.values() = x.values();
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out] { x.grad() += out.grad(); });
  }
  return out;
}

Tensor log_softmax(Tape* tape, const Tensor& x) {
  require_defined(x, "log_softmax");
  if (x.rank() != 2) {
    throw ShapeError("log_softmax: expected [batch x classes], got " + shape_str(x.shape()));
  }
  const Index rows = x.dim(0), cols = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* px = x.data();
    double* po = out.data();
    for (Index i = 0; i < rows; ++i) {
      detail::log_softmax_row(px + i * cols, po + i * cols, cols);
    }
  }
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    // d x_j = g_j - softmax_j * sum(g) per row
    tape->record(out, [x, out, rows, cols] {
      const double* ls = out.values().data();
      const double* g = out.grad().data();
      double* gx = x.grad().data();
      for (Index i = 0; i < rows; ++i) {
        const double* grow = g + i * cols;
        const double* lsrow = ls + i * cols;
        double* gxrow = gx + i * cols;
        double gs = 0.0;
        for (Index j = 0; j < cols; ++j) gs += grow[j];
        for (Index j = 0; j < cols; ++j) {
          gxrow[j] += grow[j] - std::exp(lsrow[j]) * gs;
        }
      }
    });
  }
  return out;
}

Tensor pick_rows(Tape* tape, const Tensor& x, const std::vector<int>& cols) {
  require_defined(x, "pick_rows");
  if (x.rank() != 2) {
    throw ShapeError("pick_rows: expected rank-2 input, got " + shape_str(x.shape()));
  }
  const Index rows = x.dim(0), width = x.dim(1);
  if (static_cast<Index>(cols.size()) != rows) {
    throw ShapeError("pick_rows: " + std::to_string(cols.size()) + " indices for " +
                     shape_str(x.shape()));
  }
  for (Index i = 0; i < rows; ++i) {
    const int c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= width) {
      throw DataError("pick_rows: label " + std::to_string(c) + " out of range [0, " +
                      std::to_string(width) + ") at row " + std::to_string(i));
    }
  }
  Tensor out = Tensor::zeros({rows});
  {
    const double* px = x.data();
    double* po = out.data();
    for (Index i = 0; i < rows; ++i) po[i] = px[i * width + cols[static_cast<std::size_t>(i)]];
  }
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out, cols, rows, width] {
      const double* g = out.grad().data();
      double* gx = x.grad().data();
      for (Index i = 0; i < rows; ++i) {
        gx[i * width + cols[static_cast<std::size_t>(i)]] += g[i];
      }
    });
  }
  return out;
}

Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b,
              Index stride) {
  require_defined(x, "conv2d");
  require_defined(w, "conv2d");
  require_defined(b, "conv2d");
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected x[B,Ci,H,W], w[Co,Ci,k,k], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const Index batch = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != co) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " for " +
                     std::to_string(co) + " output channels");
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (h < k || wd < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than input " +
                     shape_str(x.shape()));
  }
  const Index ho = (h - k) / stride + 1;
  const Index wo = (wd - k) / stride + 1;
  Tensor out = Tensor::zeros({batch, co, ho, wo});
  {
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.data();
    double* po = out.data();
    for (Index n = 0; n < batch; ++n) {
      for (Index oc = 0; oc < co; ++oc) {
        for (Index oy = 0; oy < ho; ++oy) {
          for (Index ox = 0; ox < wo; ++ox) {
            double acc = pb[oc];
            for (Index icn = 0; icn < ci; ++icn) {
              const double* xplane = px + ((n * ci + icn) * h + oy * stride) * wd + ox * stride;
              const double* wplane = pw + ((oc * ci + icn) * k) * k;
              for (Index ky = 0; ky < k; ++ky) {
                for (Index kx = 0; kx < k; ++kx) {
                  acc += xplane[ky * wd + kx] * wplane[ky * k + kx];
                }
              }
            }
            po[((n * co + oc) * ho + oy) * wo + ox] = acc;
          }
        }
      }
    }
  }
  if (want_grad(tape, x) || want_grad(tape, w) || want_grad(tape, b)) {
    out.set_requires_grad(true);
    tape->record(out, [x, w, b, out, stride, batch, ci, h, wd, co, k, ho, wo] {
      const double* g = out.grad().data();
      const double* px = x.data();
      const double* pw = w.data();
      double* gx = x.requires_grad() ? x.grad().data() : nullptr;
      double* gw = w.requires_grad() ? w.grad().data() : nullptr;
      double* gb = b.requires_grad() ? b.grad().data() : nullptr;
      for (Index n = 0; n < batch; ++n) {
        for (Index oc = 0; oc < co; ++oc) {
          for (Index oy = 0; oy < ho; ++oy) {
            for (Index ox = 0; ox < wo; ++ox) {
              const double gv = g[((n * co + oc) * ho + oy) * wo + ox];
              if (gb) gb[oc] += gv;
              for (Index icn = 0; icn < ci; ++icn) {
                const Index xbase = ((n * ci + icn) * h + oy * stride) * wd + ox * stride;
                const Index wbase = ((oc * ci + icn) * k) * k;
                for (Index ky = 0; ky < k; ++ky) {
                  for (Index kx = 0; kx < k; ++kx) {
                    if (gw) gw[wbase + ky * k + kx] += px[xbase + ky * wd + kx] * gv;
                    if (gx) gx[xbase + ky * wd + kx] += pw[wbase + ky * k + kx] * gv;
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor mean_pool2d(Tape* tape, const Tensor& x, Index kernel, Index stride) {
  require_defined(x, "mean_pool2d");
  if (x.rank() != 4) {
    throw ShapeError("mean_pool2d: expected x[B,C,H,W], got " + shape_str(x.shape()));
  }
  const Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const bool global = kernel <= 0;
  const Index k = global ? h : kernel;
  const Index s = global ? 1 : stride;
  if (!global && (s < 1 || h < k || w < k)) {
    throw ShapeError("mean_pool2d: kernel " + std::to_string(kernel) + " stride " +
                     std::to_string(stride) + " on " + shape_str(x.shape()));
  }
  if (global) {
    Tensor out = Tensor::zeros({batch, ch});
    const double denom = static_cast<double>(h * w);
    {
      const double* px = x.data();
      double* po = out.data();
      for (Index n = 0; n < batch; ++n) {
        for (Index c = 0; c < ch; ++c) {
          const double* plane = px + (n * ch + c) * h * w;
          double acc = 0.0;
          for (Index i = 0; i < h * w; ++i) acc += plane[i];
          po[n * ch + c] = acc / denom;
        }
      }
    }
    if (want_grad(tape, x)) {
      out.set_requires_grad(true);
      tape->record(out, [x, out, batch, ch, h, w, denom] {
        const double* g = out.grad().data();
        double* gx = x.grad().data();
        for (Index n = 0; n < batch; ++n) {
          for (Index c = 0; c < ch; ++c) {
            const double gv = g[n * ch + c] / denom;
            double* plane = gx + (n * ch + c) * h * w;
            for (Index i = 0; i < h * w; ++i) plane[i] += gv;
          }
        }
      });
    }
    return out;
  }
  const Index ho = (h - k) / s + 1;
  const Index wo = (w - k) / s + 1;
  const double denom = static_cast<double>(k * k);
  Tensor out = Tensor::zeros({batch, ch, ho, wo});
  {
    const double* px = x.data();
    double* po = out.data();
    for (Index n = 0; n < batch; ++n) {
      for (Index c = 0; c < ch; ++c) {
        const double* plane = px + (n * ch + c) * h * w;
        for (Index oy = 0; oy < ho; ++oy) {
          for (Index ox = 0; ox < wo; ++ox) {
            double acc = 0.0;
            for (Index ky = 0; ky < k; ++ky) {
              for (Index kx = 0; kx < k; ++kx) {
                acc += plane[(oy * s + ky) * w + ox * s + kx];
              }
            }
            po[((n * ch + c) * ho + oy) * wo + ox] = acc / denom;
          }
        }
      }
    }
  }
  if (want_grad(tape, x)) {
    out.set_requires_grad(true);
    tape->record(out, [x, out, batch, ch, h, w, k, s, ho, wo, denom] {
      const double* g = out.grad().data();
      double* gx = x.grad().data();
      for (Index n = 0; n < batch; ++n) {
        for (Index c = 0; c < ch; ++c) {
          double* plane = gx + (n * ch + c) * h * w;
          for (Index oy = 0; oy < ho; ++oy) {
            for (Index ox = 0; ox < wo; ++ox) {
              const double gv = g[((n * ch + c) * ho + oy) * wo + ox] / denom;
              for (Index ky = 0; ky < k; ++ky) {
                for (Index kx = 0; kx < k; ++kx) {
                  plane[(oy * s + ky) * w + ox * s + kx] += gv;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace kd
