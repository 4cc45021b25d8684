// SPDX-License-Identifier: Apache-2.0
//
// Run evaluation and reporting: top-1 micro accuracy, closed-form parameter
// and FLOP accounting, per-run reports with a canonical JSON form, and
// markdown result tables.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kd/model.hpp"
#include "kd/tensor.hpp"

namespace kd {

/// Fraction of rows whose argmax logit equals the label. Argmax ties go to
/// the lowest class index. Computed as an exact integer count divided once
/// at the end.
double top1_micro(const Tensor& logits, const std::vector<int>& labels);

/// Closed-form parameter count: dense in*out + out, conv k^2*cin*cout + cout,
/// summed over encoder layers and head.
long long count_params(const ModelSpec& spec);

/// FLOPs for one sample's forward pass: 2 per multiply-accumulate plus one
/// per bias add (dense 2*in*out + out; conv (2*k^2*cin + 1)*cout*Ho*Wo),
/// 1 per activation element, and window_numel + 1 per mean-pool output
/// (sum plus scale). Flatten is free.
long long count_flops(const ModelSpec& spec);

struct EpochStat {
  double train_loss = 0.0;    // mean over the epoch's batches
  double val_accuracy = 0.0;  // train accuracy when the dataset has no val split
  double lr = 0.0;            // learning rate at the epoch's first step
};

struct RunReport {
  std::string role;      // "teacher" | "student"
  std::string preset;    // model preset name
  std::string init;      // "scratch" | "pretrained"
  std::string strategy;  // "finetune" | "distill" | "probe"
  std::string teacher;   // teacher's preset label; empty when not distilling
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();  // full config echo

  std::vector<EpochStat> epochs;
  int best_epoch = 0;  // 1-based epoch the final parameters came from
  double test_accuracy = 0.0;
  long long param_count = 0;
  long long forward_flops = 0;  // per sample

  std::string teacher_path;          // provenance when distilling
  std::uint32_t teacher_digest = 0;  // spec digest of the teacher checkpoint

  /// Measured run time. Deliberately excluded from the canonical JSON so
  /// that re-running an identical configuration yields byte-identical
  /// report files; runners print it separately.
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);  // rejects unknown keys
  void validate() const;
};

/// Canonical bytes (sorted keys, 2-space indent, trailing newline).
void save_report(const RunReport& report, const std::string& path);
RunReport load_report(const std::string& path);

/// Markdown tables in the run roster layout: a Teachers section, then a
/// Students section, columns Model / Init / Strategy / Teacher / Top-1 (%).
/// Rows are sorted by (preset, init, strategy, teacher, seed); accuracy is
/// printed at one decimal. Identical input yields identical bytes.
std::string emit_table(const std::vector<RunReport>& reports);

/// Full-precision CSV of a [rows x cols] matrix (header f0..f{cols-1},
/// values at %.17g). import returns exactly the exported doubles, so
/// external analysis of exported embeddings sees the in-memory values.
void export_matrix_csv(const Tensor& matrix, const std::string& path);
Tensor import_matrix_csv(const std::string& path);

}  // namespace kd
