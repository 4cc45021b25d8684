// SPDX-License-Identifier: Apache-2.0
//
// Config-driven benchmark grids: one JSON file names the dataset, the
// teachers, and every student cell; the runner stages encoder pretraining
// (supervised on merged coarse labels), teacher probes, and student runs,
// then renders the result table. Cells fail independently; a rerun with
// resume enabled skips cells whose reports already match their config.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kd/data.hpp"
#include "kd/report.hpp"
#include "kd/train.hpp"

namespace kd {

/// Optimizer/schedule knobs shared by every run kind.
struct RunHyper {
  long epochs = 30;
  Index batch_size = 64;
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  double weight_decay = 1e-4;
};

/// Supervised encoder pretraining on the coarse task (labels merged
/// `merge`-to-1). One pretrain run is scheduled per preset that needs one:
/// every teacher preset and every student preset with pretrained init.
struct PretrainSpec {
  Index merge = 5;
  RunHyper hyper;
};

/// A teacher cell: linear probe of the named preset over its pretrained
/// encoder. Teachers are referenced by preset name, so each preset may
/// appear once.
struct TeacherSpec {
  std::string preset;
  RunHyper hyper;
};

/// A student cell, expanded into one run per seed.
struct StudentSpec {
  std::string preset;
  InitKind init = InitKind::scratch;
  StrategyKind strategy = StrategyKind::finetune;
  std::string teacher;  // teacher preset name; required iff distilling
  DistillConfig distill;
  RunHyper hyper;
  std::vector<std::uint64_t> seeds;  // defaults to {global seed}
};

struct ExperimentFile {
  std::uint64_t seed = 0;  // used by pretrain and teacher runs
  std::string dataset_path;            // exactly one of these two is set
  std::optional<GenSpec> dataset_gen;  //
  PretrainSpec pretrain;
  std::vector<TeacherSpec> teachers;
  std::vector<StudentSpec> students;

  void validate() const;  // references resolve, no duplicate teachers, ...
  nlohmann::json to_json() const;
  static ExperimentFile from_json(const nlohmann::json& j);  // rejects unknown keys
};

ExperimentFile load_experiment(const std::string& path);

struct GridOptions {
  int jobs = 1;         // parallel cells within a stage
  bool resume = false;  // skip cells whose artifacts already match
  std::ostream* log = nullptr;
};

struct GridOutcome {
  std::vector<RunReport> reports;  // completed teacher + student cells
  std::vector<std::pair<std::string, std::string>> failures;  // cell -> error
  std::string table;               // emit_table over `reports`
  int exit_code = 0;               // 0, or the first failure's exit code
};

/// Runs every cell into out_dir: dataset.bin (when generated),
/// pretrain-<preset>.ckpt, teacher-<preset>.ckpt, and per student run
/// student-<preset>-<init>-<strategy>[-<teacher>]-s<seed>.ckpt, each with a
/// sibling .report.json, plus results.md. A cell failure is recorded and the
/// grid continues; cells depending on the failed artifact fail in turn.
GridOutcome run_grid(const ExperimentFile& ex, const std::string& out_dir,
                     const GridOptions& opts = {});

}  // namespace kd
