// SPDX-License-Identifier: Apache-2.0
//
// Declarative model specifications and their instantiation. A model is an
// encoder (a stack of layers ending in a flat feature vector) plus a single
// dense classification head; distillation teachers, linear probes and
// compact students are all instances of this one structure.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kd/optim.hpp"
#include "kd/tensor.hpp"

namespace kd {

enum class LayerKind { dense, conv2d, pool_mean, flatten, activation };
enum class Activation { relu, gelu };

const char* to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  // dense: in -> out features
  Index in = 0;
  Index out = 0;
  // conv2d: in_channels -> out_channels with a square kernel; pool_mean uses
  // kernel/stride too (kernel <= 0 pools globally to [batch, channels]).
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  Activation act = Activation::gelu;
  bool trainable = true;

  static LayerSpec dense(Index in, Index out, bool trainable = true);
  static LayerSpec conv(Index in_ch, Index out_ch, Index kernel, Index stride = 1,
                        bool trainable = true);
  static LayerSpec pool(Index kernel, Index stride);
  static LayerSpec global_pool();
  static LayerSpec flat();
  static LayerSpec activation(Activation act);
};

struct ModelSpec {
  std::string name;
  Shape input_shape;              // per-sample shape, e.g. {32} or {1, 16, 16}
  std::vector<LayerSpec> layers;  // encoder stack
  LayerSpec head;                 // dense: feature width -> class count
};

/// Propagates the per-sample shape through every layer, checking that
/// consecutive layers compose and that the encoder ends in a flat feature
/// vector matching the head. Returns the encoder output width. Errors name
/// the offending layer index.
Index validate(const ModelSpec& spec);

/// Per-sample shape trace: [0] is the input shape, [i+1] the output of
/// layer i. Performs the same per-layer checks as validate().
std::vector<Shape> layer_shapes(const ModelSpec& spec);

/// 32-bit FNV-1a digest of the structural description (layer kinds and
/// sizes, input shape, head). The name is excluded: two differently named
/// but structurally identical specs are interchangeable for loading.
std::uint32_t spec_digest(const ModelSpec& spec);

struct Param {
  std::string name;  // "enc3.w", "head.b", ...
  Tensor tensor;
  bool is_bias = false;
  bool frozen = false;
};

class Model {
 public:
  /// Instantiates all parameters as zeros (requires_grad on). Layers marked
  /// trainable=false start frozen.
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& param(const std::string& name);  // ConfigError if absent

  /// Encoder output [batch x features] for a batch shaped [batch x input_shape].
  Tensor embed(Tape* tape, const Tensor& batch) const;
  /// Head logits from precomputed encoder features.
  Tensor head_forward(Tape* tape, const Tensor& features) const;
  /// head_forward(embed(batch)): literally that composition, same tape path.
  Tensor forward(Tape* tape, const Tensor& batch) const;

  /// Marks every encoder parameter frozen (head left trainable). Frozen
  /// parameters are excluded from optim_slots(), which is what guarantees
  /// they stay bitwise identical across any number of optimizer steps.
  void freeze_encoder();

  /// Optimizer slots for all unfrozen parameters; weight decay applies to
  /// weights, never biases.
  std::vector<ParamSlot> optim_slots() const;

  Index num_classes() const { return spec_.head.out; }
  Index feature_width() const { return feature_width_; }

 private:
  ModelSpec spec_;
  std::vector<Param> params_;
  Index feature_width_ = 0;
};

/// Weight-init scale used across the pipeline unless overridden.
inline constexpr double kDefaultInitStd = 0.02;

/// All parameters zero; then every weight is redrawn from N(0, std^2)
/// truncated to +-2 std by resampling, in declaration order from a single
/// seeded stream. Biases stay zero. Bitwise deterministic in (spec, seed).
/// Values are float32-representable, so a fresh init round-trips through a
/// checkpoint bitwise.
Model init_truncated_normal(const ModelSpec& spec, double stddev,
                            std::uint64_t seed);

/// Preset roster: "dense-t", "dense-s" (flatten + dense stacks), "conv-t",
/// "conv-s" (conv/pool stacks needing [C,H,W] input), and the larger
/// "teacher-l". ConfigError on an unknown name or an incompatible input shape.
ModelSpec make_preset(const std::string& name, const Shape& input_shape,
                      Index num_classes);
std::vector<std::string> preset_names();

}  // namespace kd
