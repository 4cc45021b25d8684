// SPDX-License-Identifier: Apache-2.0

#include "kd/model.hpp"

#include <utility>

#include "kd/rng.hpp"

namespace kd {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::pool_mean: return "pool-mean";
    case LayerKind::flatten: return "flatten";
    case LayerKind::activation: return "activation";
  }
  return "?";
}

LayerSpec LayerSpec::dense(Index in, Index out, bool trainable) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in = in;
  l.out = out;
  l.trainable = trainable;
  return l;
}

LayerSpec LayerSpec::conv(Index in_ch, Index out_ch, Index kernel, Index stride,
                          bool trainable) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.trainable = trainable;
  return l;
}

LayerSpec LayerSpec::pool(Index kernel, Index stride) {
  LayerSpec l;
  l.kind = LayerKind::pool_mean;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::global_pool() {
  LayerSpec l;
  l.kind = LayerKind::pool_mean;
  l.kernel = 0;
  l.stride = 1;
  return l;
}

LayerSpec LayerSpec::flat() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

LayerSpec LayerSpec::activation(Activation act) {
  LayerSpec l;
  l.kind = LayerKind::activation;
  l.act = act;
  return l;
}

namespace {

[[noreturn]] void layer_error(const ModelSpec& spec, std::size_t i,
                              const std::string& what) {
  throw ConfigError("model spec '" + spec.name + "': layer " + std::to_string(i) +
                    " (" + to_string(spec.layers[i].kind) + "): " + what);
}

}  // namespace

std::vector<Shape> layer_shapes(const ModelSpec& spec) {
  if (spec.input_shape.empty()) {
    throw ConfigError("model spec '" + spec.name + "': empty input shape");
  }
  for (Index d : spec.input_shape) {
    if (d <= 0) {
      throw ConfigError("model spec '" + spec.name + "': non-positive input dim in " +
                        shape_str(spec.input_shape));
    }
  }
  std::vector<Shape> trace;
  Shape s = spec.input_shape;
  trace.push_back(s);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::dense:
        if (s.size() != 1) layer_error(spec, i, "needs flat input, has " + shape_str(s));
        if (l.in != s[0]) {
          layer_error(spec, i, "expects " + std::to_string(l.in) + " features, gets " +
                                   std::to_string(s[0]));
        }
        if (l.out <= 0) layer_error(spec, i, "non-positive width");
        s = {l.out};
        break;
      case LayerKind::conv2d: {
        if (s.size() != 3) {
          layer_error(spec, i, "needs [channels, height, width] input, has " + shape_str(s));
        }
        if (l.in_channels != s[0]) {
          layer_error(spec, i, "expects " + std::to_string(l.in_channels) +
                                   " channels, gets " + std::to_string(s[0]));
        }
        if (l.out_channels <= 0 || l.kernel < 1 || l.stride < 1) {
          layer_error(spec, i, "non-positive channel/kernel/stride");
        }
        if (s[1] < l.kernel || s[2] < l.kernel) {
          layer_error(spec, i, "kernel " + std::to_string(l.kernel) +
                                   " larger than input " + shape_str(s));
        }
        s = {l.out_channels, (s[1] - l.kernel) / l.stride + 1,
             (s[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::pool_mean: {
        if (s.size() != 3) {
          layer_error(spec, i, "needs [channels, height, width] input, has " + shape_str(s));
        }
        if (l.kernel <= 0) {
          s = {s[0]};  // global pool flattens the spatial dims away
        } else {
          if (l.stride < 1 || s[1] < l.kernel || s[2] < l.kernel) {
            layer_error(spec, i, "window " + std::to_string(l.kernel) + "/" +
                                     std::to_string(l.stride) + " does not fit " +
                                     shape_str(s));
          }
          s = {s[0], (s[1] - l.kernel) / l.stride + 1,
               (s[2] - l.kernel) / l.stride + 1};
        }
        break;
      }
      case LayerKind::flatten:
        s = {shape_numel(s)};
        break;
      case LayerKind::activation:
        break;
    }
    trace.push_back(s);
  }
  return trace;
}

Index validate(const ModelSpec& spec) {
  const Shape s = layer_shapes(spec).back();
  if (spec.head.kind != LayerKind::dense) {
    throw ConfigError("model spec '" + spec.name + "': head must be a dense layer");
  }
  if (s.size() != 1) {
    throw ConfigError("model spec '" + spec.name + "': encoder ends in " +
                      shape_str(s) + ", not a flat feature vector");
  }
  if (spec.head.in != s[0]) {
    throw ConfigError("model spec '" + spec.name + "': head expects " +
                      std::to_string(spec.head.in) + " features, encoder provides " +
                      std::to_string(s[0]));
  }
  if (spec.head.out < 2) {
    throw ConfigError("model spec '" + spec.name + "': head must map to >= 2 classes");
  }
  return s[0];
}

std::uint32_t spec_digest(const ModelSpec& spec) {
  std::uint32_t h = 2166136261u;
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<std::uint32_t>((v >> (8 * i)) & 0xff);
      h *= 16777619u;
    }
  };
  feed(spec.input_shape.size());
  for (Index d : spec.input_shape) feed(static_cast<std::uint64_t>(d));
  feed(spec.layers.size());
  for (const LayerSpec& l : spec.layers) {
    feed(static_cast<std::uint64_t>(l.kind));
    switch (l.kind) {
      case LayerKind::dense:
        feed(static_cast<std::uint64_t>(l.in));
        feed(static_cast<std::uint64_t>(l.out));
        break;
      case LayerKind::conv2d:
        feed(static_cast<std::uint64_t>(l.in_channels));
        feed(static_cast<std::uint64_t>(l.out_channels));
        feed(static_cast<std::uint64_t>(l.kernel));
        feed(static_cast<std::uint64_t>(l.stride));
        break;
      case LayerKind::pool_mean:
        feed(static_cast<std::uint64_t>(l.kernel));
        feed(static_cast<std::uint64_t>(l.stride));
        break;
      case LayerKind::flatten:
        break;
      case LayerKind::activation:
        feed(static_cast<std::uint64_t>(l.act));
        break;
    }
  }
  feed(static_cast<std::uint64_t>(spec.head.in));
  feed(static_cast<std::uint64_t>(spec.head.out));
  return h;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  feature_width_ = validate(spec_);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string base = "enc" + std::to_string(i);
    if (l.kind == LayerKind::dense) {
      params_.push_back({base + ".w", Tensor::zeros({l.in, l.out}, true), false,
                         !l.trainable});
      params_.push_back({base + ".b", Tensor::zeros({l.out}, true), true,
                         !l.trainable});
    } else if (l.kind == LayerKind::conv2d) {
      params_.push_back({base + ".w",
                         Tensor::zeros({l.out_channels, l.in_channels, l.kernel,
                                        l.kernel}, true),
                         false, !l.trainable});
      params_.push_back({base + ".b", Tensor::zeros({l.out_channels}, true), true,
                         !l.trainable});
    }
  }
  params_.push_back({"head.w", Tensor::zeros({spec_.head.in, spec_.head.out}, true),
                     false, !spec_.head.trainable});
  params_.push_back({"head.b", Tensor::zeros({spec_.head.out}, true), true,
                     !spec_.head.trainable});
}

Param& Model::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("model '" + spec_.name + "': no parameter named '" + name + "'");
}

Tensor Model::embed(Tape* tape, const Tensor& batch) const {
  if (!batch.defined() ||
      batch.rank() != static_cast<int>(spec_.input_shape.size()) + 1) {
    throw ShapeError("model '" + spec_.name + "': batch must be [n x " +
                     shape_str(spec_.input_shape) + "]");
  }
  for (std::size_t i = 0; i < spec_.input_shape.size(); ++i) {
    if (batch.dim(static_cast<int>(i) + 1) != spec_.input_shape[i]) {
      throw ShapeError("model '" + spec_.name + "': batch " + shape_str(batch.shape()) +
                       " does not match input shape " + shape_str(spec_.input_shape));
    }
  }
  Tensor x = batch;
  std::size_t pi = 0;  // parameter cursor: two per dense/conv layer
  for (const LayerSpec& l : spec_.layers) {
    switch (l.kind) {
      case LayerKind::dense: {
        const Tensor& w = params_[pi].tensor;
        const Tensor& b = params_[pi + 1].tensor;
        pi += 2;
        x = add_bias(tape, matmul(tape, x, w), b);
        break;
      }
      case LayerKind::conv2d: {
        const Tensor& w = params_[pi].tensor;
        const Tensor& b = params_[pi + 1].tensor;
        pi += 2;
        x = conv2d(tape, x, w, b, l.stride);
        break;
      }
      case LayerKind::pool_mean:
        x = mean_pool2d(tape, x, l.kernel, l.stride);
        break;
      case LayerKind::flatten:
        if (x.rank() > 2) {
          x = reshape(tape, x, {x.dim(0), x.numel() / x.dim(0)});
        }
        break;
      case LayerKind::activation:
        x = l.act == Activation::relu ? relu(tape, x) : gelu(tape, x);
        break;
    }
  }
  return x;
}

Tensor Model::head_forward(Tape* tape, const Tensor& features) const {
  if (!features.defined() || features.rank() != 2 ||
      features.dim(1) != spec_.head.in) {
    throw ShapeError("model '" + spec_.name + "': head expects [n x " +
                     std::to_string(spec_.head.in) + "] features");
  }
  const Tensor& w = params_[params_.size() - 2].tensor;
  const Tensor& b = params_[params_.size() - 1].tensor;
  return add_bias(tape, matmul(tape, features, w), b);
}

Tensor Model::forward(Tape* tape, const Tensor& batch) const {
  return head_forward(tape, embed(tape, batch));
}

void Model::freeze_encoder() {
  for (auto& p : params_) {
    if (p.name.rfind("head.", 0) == 0) continue;
    p.frozen = true;
    p.tensor.set_requires_grad(false);  // encoder becomes a constant under autodiff
  }
}

std::vector<ParamSlot> Model::optim_slots() const {
  std::vector<ParamSlot> slots;
  for (const auto& p : params_) {
    if (p.frozen) continue;
    slots.push_back({p.tensor, !p.is_bias});
  }
  return slots;
}

Model init_truncated_normal(const ModelSpec& spec, double stddev,
                            std::uint64_t seed) {
  if (!(stddev > 0.0)) {
    throw ConfigError("init: std must be > 0, got " + std::to_string(stddev));
  }
  Model model(spec);
  Rng rng(seed);
  for (auto& p : model.params()) {
    if (p.is_bias) continue;  // biases start at zero
    double* d = p.tensor.data();
    for (Index i = 0; i < p.tensor.numel(); ++i) {
      // Values are kept float32-representable so a fresh init survives the
      // float32 checkpoint round trip bitwise.
      d[i] = static_cast<double>(static_cast<float>(rng.trunc_normal(stddev)));
    }
  }
  return model;
}

ModelSpec make_preset(const std::string& name, const Shape& input_shape,
                      Index num_classes) {
  if (num_classes < 2) {
    throw ConfigError("preset '" + name + "': need >= 2 classes, got " +
                      std::to_string(num_classes));
  }
  ModelSpec s;
  s.name = name;
  s.input_shape = input_shape;
  const Index flat_width = shape_numel(input_shape);

  auto dense_stack = [&](std::initializer_list<Index> widths) {
    s.layers.push_back(LayerSpec::flat());
    Index cur = flat_width;
    for (Index w : widths) {
      s.layers.push_back(LayerSpec::dense(cur, w));
      s.layers.push_back(LayerSpec::activation(Activation::gelu));
      cur = w;
    }
    s.head = LayerSpec::dense(cur, num_classes);
  };
  auto need_image = [&] {
    if (input_shape.size() != 3) {
      throw ConfigError("preset '" + name + "' needs [channels, height, width] input, got " +
                        shape_str(input_shape));
    }
  };

  if (name == "dense-t") {
    dense_stack({64, 64});
  } else if (name == "dense-s") {
    dense_stack({128, 128, 128});
  } else if (name == "teacher-l") {
    dense_stack({256, 256, 256});
  } else if (name == "conv-t") {
    need_image();
    s.layers = {LayerSpec::conv(input_shape[0], 8, 3),
                LayerSpec::activation(Activation::gelu),
                LayerSpec::pool(2, 2),
                LayerSpec::conv(8, 16, 3),
                LayerSpec::activation(Activation::gelu),
                LayerSpec::global_pool()};
    s.head = LayerSpec::dense(16, num_classes);
  } else if (name == "conv-s") {
    need_image();
    s.layers = {LayerSpec::conv(input_shape[0], 16, 3),
                LayerSpec::activation(Activation::gelu),
                LayerSpec::pool(2, 2),
                LayerSpec::conv(16, 32, 3),
                LayerSpec::activation(Activation::gelu),
                LayerSpec::conv(32, 32, 3),
                LayerSpec::activation(Activation::gelu),
                LayerSpec::global_pool()};
    s.head = LayerSpec::dense(32, num_classes);
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
  }
  validate(s);  // rejects e.g. images too small for the conv stacks
  return s;
}

std::vector<std::string> preset_names() {
  return {"dense-t", "dense-s", "conv-t", "conv-s", "teacher-l"};
}

}  // namespace kd
