// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints: named parameter tensors stored as little-endian float32
// plus a JSON metadata block (model identity, training config echo, final
// metrics, payload CRC). Values survive save -> load bitwise at the stored
// 32-bit precision.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kd/model.hpp"
#include "kd/tensor.hpp"

namespace kd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  /// Structural digest of the ModelSpec the tensors belong to.
  std::uint32_t spec_digest = 0;
  /// Parameter tensors in declaration order; values are float32-valued.
  std::vector<std::pair<std::string, Tensor>> tensors;
  /// Must carry a "model" object {preset, input_shape, num_classes} so the
  /// model can be rebuilt; save_checkpoint adds "payload_crc32".
  nlohmann::json metadata;

  const Tensor* find(const std::string& name) const;
};

/// Snapshot of a model's parameters, rounded to float32. `metadata` is
/// merged with the generated "model" section.
Checkpoint checkpoint_from_model(const Model& model,
                                 nlohmann::json metadata = nlohmann::json::object());

void save_checkpoint(const Checkpoint& ck, const std::string& path);

/// DataError on bad magic, unsupported version, truncation, payload CRC
/// mismatch or malformed metadata; IoError when the file cannot be read.
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the model named by the checkpoint's own metadata and loads every
/// tensor into it.
Model model_from_checkpoint(const Checkpoint& ck);

/// Loads into a caller-chosen spec. The spec digests must match; a mismatch
/// is a ConfigError naming both preset names.
Model model_for_spec(const Checkpoint& ck, const ModelSpec& target);

/// Fresh truncated-normal init of `spec` (seeded), then the encoder tensors
/// are overwritten from the checkpoint. The head keeps its fresh init, so
/// the checkpoint's class count need not match. Encoder shape mismatches
/// raise ShapeError naming the tensor; nothing is frozen.
Model load_pretrained(const ModelSpec& spec, const std::string& path,
                      std::uint64_t seed, double init_std = kDefaultInitStd);

}  // namespace kd
