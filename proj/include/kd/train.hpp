// SPDX-License-Identifier: Apache-2.0
//
// The two-step training pipeline: teacher linear probes over a frozen
// pretrained encoder, and students trained by plain cross-entropy or by
// blended distillation against a saved teacher. Runs are bitwise
// deterministic in (dataset, config).

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

#include "kd/checkpoint.hpp"
#include "kd/data.hpp"
#include "kd/losses.hpp"
#include "kd/model.hpp"
#include "kd/report.hpp"

namespace kd {

enum class InitKind { scratch, pretrained };
enum class StrategyKind { finetune, distill };

const char* to_string(InitKind k);
const char* to_string(StrategyKind k);

struct TrainConfig {
  std::string preset;
  InitKind init = InitKind::scratch;
  std::string pretrained_path;  // required iff init == pretrained
  StrategyKind strategy = StrategyKind::finetune;
  std::string teacher_path;  // required iff strategy == distill
  DistillConfig distill;     // temperature / alpha / kl direction
  long epochs = 30;
  Index batch_size = 64;
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);  // rejects unknown keys
};

/// Logits / encoder features / top-1 accuracy for one split, computed in
/// dataset order over fixed-size chunks. Row outputs are independent of the
/// chunking, so these equal any batched evaluation bitwise.
Tensor split_logits(const Model& model, const Dataset& ds, Split split,
                    Index chunk = 256);
Tensor split_embeddings(const Model& model, const Dataset& ds, Split split,
                        Index chunk = 256);
double evaluate(const Model& model, const Dataset& ds, Split split,
                Index chunk = 256);

struct TrainOptions {
  /// Precompute all teacher logits once and gather per batch instead of
  /// running the teacher per batch. Bitwise identical results.
  bool cache_teacher_logits = false;
  /// When set, one machine-parsable line per epoch:
  /// "epoch N train_loss L val_acc A lr R".
  std::ostream* log = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;  // parameters of the selected epoch, float32-rounded
  RunReport report;
};

/// Trains cfg.preset on the dataset. Per batch: student forward, teacher
/// forward in no-gradient mode when distilling with alpha > 0, blended loss,
/// backward, AdamW step at the cosine rate. The returned checkpoint is the
/// best-validation epoch (ties to the earlier epoch) or the last epoch when
/// the dataset has no val split. The reported test accuracy is computed from
/// the returned (rounded) parameters, so re-evaluating the checkpoint
/// reproduces it exactly; with no test split it falls back to val, then
/// train. A non-finite loss aborts with NumericError naming the step.
TrainResult train_student(const Dataset& ds, const TrainConfig& cfg,
                          const TrainOptions& opts = {});

/// Step one of the pipeline: adopts the encoder from `encoder_ckpt`, freezes
/// it, and trains only the classification head with cross-entropy under
/// cfg's optimizer and schedule (cfg.strategy must be finetune; cfg's init
/// fields are ignored — a probe is always pretrained). Encoder features are
/// precomputed once and reused every epoch, which is bitwise identical to
/// forwarding through the frozen encoder each step. The result is a full
/// teacher checkpoint whose encoder tensors equal the input checkpoint's.
TrainResult train_teacher_probe(const std::string& encoder_ckpt,
                                const Dataset& ds, const TrainConfig& cfg,
                                const TrainOptions& opts = {});

}  // namespace kd
