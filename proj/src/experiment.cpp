// SPDX-License-Identifier: Apache-2.0

#include "kd/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "kd/checkpoint.hpp"
#include "kd/errors.hpp"
#include "kd/model.hpp"

namespace fs = std::filesystem;

namespace kd {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(what + ": unknown key \"" + it.key() + "\"");
  }
}

RunHyper hyper_from_json(const nlohmann::json& j, RunHyper h) {
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.lr_max = j.value("lr_max", h.lr_max);
  h.lr_min = j.value("lr_min", h.lr_min);
  h.weight_decay = j.value("weight_decay", h.weight_decay);
  return h;
}

void hyper_to_json(nlohmann::json& j, const RunHyper& h) {
  j["epochs"] = h.epochs;
  j["batch_size"] = h.batch_size;
  j["lr_max"] = h.lr_max;
  j["lr_min"] = h.lr_min;
  j["weight_decay"] = h.weight_decay;
}

void check_hyper(const RunHyper& h, const std::string& what) {
  if (h.epochs < 1) throw ConfigError(what + ": epochs must be >= 1");
  if (h.batch_size < 1) throw ConfigError(what + ": batch_size must be >= 1");
  if (!(h.lr_max > 0.0) || !(h.lr_min > 0.0) || h.lr_min > h.lr_max) {
    throw ConfigError(what + ": need lr_max >= lr_min > 0");
  }
  if (h.weight_decay < 0.0) throw ConfigError(what + ": weight_decay must be >= 0");
}

void check_preset(const std::string& name, const std::string& what) {
  for (const std::string& p : preset_names()) {
    if (p == name) return;
  }
  throw ConfigError(what + ": unknown preset \"" + name + "\"");
}

void apply_hyper(TrainConfig& cfg, const RunHyper& h) {
  cfg.epochs = h.epochs;
  cfg.batch_size = h.batch_size;
  cfg.lr_max = h.lr_max;
  cfg.lr_min = h.lr_min;
  cfg.weight_decay = h.weight_decay;
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentFile
// ---------------------------------------------------------------------------

void ExperimentFile::validate() const {
  if (dataset_path.empty() == !dataset_gen.has_value()) {
    throw ConfigError(
        "experiment: dataset must give exactly one of a file path or a "
        "generation spec");
  }
  if (dataset_gen) dataset_gen->validate();
  if (pretrain.merge < 1) throw ConfigError("experiment pretrain: merge must be >= 1");
  check_hyper(pretrain.hyper, "experiment pretrain");

  std::set<std::string> teacher_names;
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    const std::string what = "experiment teacher[" + std::to_string(i) + "]";
    if (teachers[i].preset.empty()) throw ConfigError(what + ": preset is required");
    check_preset(teachers[i].preset, what);
    check_hyper(teachers[i].hyper, what);
    if (!teacher_names.insert(teachers[i].preset).second) {
      throw ConfigError(what + ": duplicate teacher preset \"" + teachers[i].preset +
                        "\" (teachers are referenced by preset name)");
    }
  }

  std::size_t runs = teachers.size();
  for (std::size_t i = 0; i < students.size(); ++i) {
    const std::string what = "experiment student[" + std::to_string(i) + "]";
    const StudentSpec& s = students[i];
    if (s.preset.empty()) throw ConfigError(what + ": preset is required");
    check_preset(s.preset, what);
    check_hyper(s.hyper, what);
    if (s.strategy == StrategyKind::distill) {
      if (s.teacher.empty()) {
        throw ConfigError(what + ": distill requires a teacher name");
      }
      if (teacher_names.count(s.teacher) == 0) {
        throw ConfigError(what + ": teacher \"" + s.teacher +
                          "\" is not declared in teachers");
      }
      s.distill.validate();
    } else if (!s.teacher.empty()) {
      throw ConfigError(what + ": teacher given but strategy is finetune");
    }
    if (s.seeds.empty()) throw ConfigError(what + ": seeds must be non-empty");
    runs += s.seeds.size();
  }
  if (runs == 0) throw ConfigError("experiment: no teachers and no students");
}

nlohmann::json ExperimentFile::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  if (dataset_gen) {
    j["dataset"] = {{"generate", dataset_gen->to_json()}};
  } else {
    j["dataset"] = {{"path", dataset_path}};
  }
  j["pretrain"] = {{"merge", pretrain.merge}};
  hyper_to_json(j["pretrain"], pretrain.hyper);
  j["teachers"] = nlohmann::json::array();
  for (const TeacherSpec& t : teachers) {
    nlohmann::json tj = {{"preset", t.preset}};
    hyper_to_json(tj, t.hyper);
    j["teachers"].push_back(tj);
  }
  j["students"] = nlohmann::json::array();
  for (const StudentSpec& s : students) {
    nlohmann::json sj;
    sj["preset"] = s.preset;
    sj["init"] = to_string(s.init);
    if (s.strategy == StrategyKind::finetune) {
      sj["strategy"] = "finetune";
    } else {
      sj["strategy"] = {{"distill",
                         {{"teacher", s.teacher},
                          {"temperature", s.distill.temperature},
                          {"alpha", s.distill.alpha},
                          {"kl_direction", to_string(s.distill.direction)}}}};
    }
    hyper_to_json(sj, s.hyper);
    sj["seeds"] = s.seeds;
    j["students"].push_back(sj);
  }
  return j;
}

ExperimentFile ExperimentFile::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"seed", "dataset", "pretrain", "teachers", "students"},
                 "experiment");
  ExperimentFile ex;
  try {
    ex.seed = j.value("seed", ex.seed);

    const nlohmann::json& d = j.at("dataset");
    reject_unknown(d, {"path", "generate"}, "experiment dataset");
    if (d.contains("path") == d.contains("generate")) {
      throw ConfigError(
          "experiment dataset: give exactly one of \"path\" or \"generate\"");
    }
    if (d.contains("path")) {
      ex.dataset_path = d["path"].get<std::string>();
    } else {
      ex.dataset_gen = GenSpec::from_json(d["generate"]);
    }

    if (j.contains("pretrain")) {
      const nlohmann::json& p = j["pretrain"];
      reject_unknown(p,
                     {"merge", "epochs", "batch_size", "lr_max", "lr_min",
                      "weight_decay"},
                     "experiment pretrain");
      ex.pretrain.merge = p.value("merge", ex.pretrain.merge);
      ex.pretrain.hyper = hyper_from_json(p, ex.pretrain.hyper);
    }

    if (j.contains("teachers")) {
      if (!j["teachers"].is_array()) {
        throw ConfigError("experiment: teachers must be an array");
      }
      for (const nlohmann::json& tj : j["teachers"]) {
        reject_unknown(tj,
                       {"preset", "epochs", "batch_size", "lr_max", "lr_min",
                        "weight_decay"},
                       "experiment teacher");
        TeacherSpec t;
        t.preset = tj.at("preset").get<std::string>();
        t.hyper = hyper_from_json(tj, t.hyper);
        ex.teachers.push_back(std::move(t));
      }
    }

    if (j.contains("students")) {
      if (!j["students"].is_array()) {
        throw ConfigError("experiment: students must be an array");
      }
      for (const nlohmann::json& sj : j["students"]) {
        reject_unknown(sj,
                       {"preset", "init", "strategy", "epochs", "batch_size",
                        "lr_max", "lr_min", "weight_decay", "seeds"},
                       "experiment student");
        StudentSpec s;
        s.preset = sj.at("preset").get<std::string>();
        if (sj.contains("init")) {
          const std::string init = sj["init"].get<std::string>();
          if (init == "scratch") {
            s.init = InitKind::scratch;
          } else if (init == "pretrained") {
            s.init = InitKind::pretrained;  // checkpoint path is resolved by the grid
          } else {
            throw ConfigError(
                "experiment student: init must be \"scratch\" or \"pretrained\"");
          }
        }
        if (sj.contains("strategy")) {
          const nlohmann::json& st = sj["strategy"];
          if (st.is_string() && st == "finetune") {
            s.strategy = StrategyKind::finetune;
          } else if (st.is_object()) {
            reject_unknown(st, {"distill"}, "experiment student strategy");
            const nlohmann::json& di = st.at("distill");
            reject_unknown(di, {"teacher", "temperature", "alpha", "kl_direction"},
                           "experiment student distill");
            s.strategy = StrategyKind::distill;
            s.teacher = di.at("teacher").get<std::string>();
            s.distill.temperature = di.value("temperature", s.distill.temperature);
            s.distill.alpha = di.value("alpha", s.distill.alpha);
            if (di.contains("kl_direction")) {
              s.distill.direction =
                  kl_direction_from_string(di["kl_direction"].get<std::string>());
            }
          } else {
            throw ConfigError(
                "experiment student: strategy must be \"finetune\" or "
                "{\"distill\": {...}}");
          }
        }
        s.hyper = hyper_from_json(sj, s.hyper);
        if (sj.contains("seeds")) {
          s.seeds = sj["seeds"].get<std::vector<std::uint64_t>>();
        } else {
          s.seeds = {ex.seed};
        }
        ex.students.push_back(std::move(s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment: ") + e.what());
  }
  ex.validate();
  return ex;
}

ExperimentFile load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open experiment file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("experiment file " + path + ": " + e.what());
  }
  return ExperimentFile::from_json(j);
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

namespace {

/// One schedulable unit. Stages order the dependencies: pretrain runs feed
/// teacher probes and pretrained-init students, teacher probes feed
/// distilling students.
struct Cell {
  std::string stem;            // artifact basename within out_dir
  std::vector<std::string> needs;  // stems that must have completed
  TrainConfig cfg;             // fully resolved (absolute-ish paths)
  nlohmann::json expected_config;  // what a finished report must echo
  bool is_probe = false;
  std::string encoder_ckpt;    // probe input (when is_probe)
  bool coarse_data = false;    // pretrain cells train on merged labels
  bool in_table = false;       // teacher + student cells feed results.md
};

std::string student_stem(const StudentSpec& s, std::uint64_t seed) {
  std::string stem = "student-" + s.preset + "-" + to_string(s.init) + "-" +
                     to_string(s.strategy);
  if (s.strategy == StrategyKind::distill) stem += "-" + s.teacher;
  return stem + "-s" + std::to_string(seed);
}

struct CellResult {
  bool ok = false;
  bool skipped = false;  // resume hit: artifacts already match
  RunReport report;
  std::string error;
  int exit_code = 0;
  double seconds = 0.0;
};

class GridLogger {
 public:
  explicit GridLogger(std::ostream* out) : out_(out) {}
  void line(const std::string& text) {
    if (!out_) return;
    std::lock_guard<std::mutex> hold(mu_);
    *out_ << text << "\n";
    out_->flush();
  }

 private:
  std::ostream* out_;
  std::mutex mu_;
};

/// Resume test: the cell is done iff both artifacts exist, the report's
/// config echo equals what this grid would run, and the checkpoint passes
/// its integrity checks (so a run interrupted mid-write is re-run).
bool cell_complete(const fs::path& ckpt, const fs::path& report,
                   const nlohmann::json& expected_config, RunReport* out) {
  std::error_code ec;
  if (!fs::exists(ckpt, ec) || !fs::exists(report, ec)) return false;
  try {
    RunReport r = load_report(report.string());
    if (r.config != expected_config) return false;
    load_checkpoint(ckpt.string());
    *out = std::move(r);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

std::string pct1(double frac) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * frac);
  return buf;
}

template <typename Body>
void parallel_for(int jobs, std::size_t n, Body body) {
  if (n == 0) return;
  const std::size_t workers =
      std::min<std::size_t>(std::max(jobs, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace

GridOutcome run_grid(const ExperimentFile& ex, const std::string& out_dir,
                     const GridOptions& opts) {
  ex.validate();
  GridLogger log(opts.log);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  const fs::path out(out_dir);

  // Dataset: load the named file, or generate and persist alongside the
  // results. Generation is deterministic, so rewriting on resume reproduces
  // the same bytes.
  Dataset ds = [&] {
    if (ex.dataset_gen) {
      Dataset g = generate(*ex.dataset_gen);
      save_dataset(g, (out / "dataset.bin").string(), DataFormat::packed);
      return g;
    }
    return load_dataset(ex.dataset_path, data_format_for_path(ex.dataset_path));
  }();
  log.line("[grid] dataset: " + std::to_string(ds.size()) + " samples, " +
           std::to_string(ds.num_classes) + " classes (train " +
           std::to_string(ds.train_range.size()) + ", val " +
           std::to_string(ds.val_range.size()) + ", test " +
           std::to_string(ds.test_range.size()) + ")");

  // Coarse task for pretraining, built on first use. call_once keeps this
  // safe under --jobs > 1; if merging throws, the flag stays unset and each
  // pretrain cell fails with the merge error itself.
  std::optional<Dataset> coarse;
  std::once_flag coarse_once;
  auto coarse_ds = [&]() -> const Dataset& {
    std::call_once(coarse_once, [&] { coarse = merge_labels(ds, ex.pretrain.merge); });
    return *coarse;
  };

  // --- Cell construction -------------------------------------------------
  // Presets needing a pretrained encoder: every teacher, plus every student
  // preset trained from a pretrained init.
  std::set<std::string> pretrain_presets;
  for (const TeacherSpec& t : ex.teachers) pretrain_presets.insert(t.preset);
  for (const StudentSpec& s : ex.students) {
    if (s.init == InitKind::pretrained) pretrain_presets.insert(s.preset);
  }

  auto ckpt_path = [&](const std::string& stem) { return out / (stem + ".ckpt"); };
  auto report_path = [&](const std::string& stem) {
    return out / (stem + ".report.json");
  };

  std::vector<Cell> stage_pretrain, stage_teacher, stage_student;

  for (const std::string& preset : pretrain_presets) {
    Cell c;
    c.stem = "pretrain-" + preset;
    c.cfg.preset = preset;
    c.cfg.init = InitKind::scratch;
    c.cfg.strategy = StrategyKind::finetune;
    apply_hyper(c.cfg, ex.pretrain.hyper);
    c.cfg.seed = ex.seed;
    c.expected_config = c.cfg.to_json();
    c.coarse_data = true;
    stage_pretrain.push_back(std::move(c));
  }

  for (const TeacherSpec& t : ex.teachers) {
    Cell c;
    c.stem = "teacher-" + t.preset;
    c.needs = {"pretrain-" + t.preset};
    c.cfg.preset = t.preset;
    c.cfg.strategy = StrategyKind::finetune;
    apply_hyper(c.cfg, t.hyper);
    c.cfg.seed = ex.seed;
    c.is_probe = true;
    c.encoder_ckpt = ckpt_path("pretrain-" + t.preset).string();
    c.expected_config = c.cfg.to_json();
    c.expected_config["init"] = {{"pretrained", c.encoder_ckpt}};
    c.in_table = true;
    stage_teacher.push_back(std::move(c));
  }

  for (const StudentSpec& s : ex.students) {
    for (std::uint64_t seed : s.seeds) {
      Cell c;
      c.stem = student_stem(s, seed);
      c.cfg.preset = s.preset;
      c.cfg.init = s.init;
      if (s.init == InitKind::pretrained) {
        c.cfg.pretrained_path = ckpt_path("pretrain-" + s.preset).string();
        c.needs.push_back("pretrain-" + s.preset);
      }
      c.cfg.strategy = s.strategy;
      if (s.strategy == StrategyKind::distill) {
        c.cfg.teacher_path = ckpt_path("teacher-" + s.teacher).string();
        c.cfg.distill = s.distill;
        c.needs.push_back("teacher-" + s.teacher);
      }
      apply_hyper(c.cfg, s.hyper);
      c.cfg.seed = seed;
      c.expected_config = c.cfg.to_json();
      c.in_table = true;
      stage_student.push_back(std::move(c));
    }
  }

  // --- Execution ---------------------------------------------------------
  GridOutcome outcome;
  std::mutex results_mu;
  std::map<std::string, bool> done;  // stem -> completed (this run or resumed)

  auto run_stage = [&](std::vector<Cell>& cells) {
    std::vector<CellResult> results(cells.size());
    parallel_for(opts.jobs, cells.size(), [&](std::size_t i) {
      const Cell& c = cells[i];
      CellResult& r = results[i];

      {
        std::lock_guard<std::mutex> hold(results_mu);
        for (const std::string& need : c.needs) {
          auto it = done.find(need);
          if (it == done.end() || !it->second) {
            r.error = "prerequisite " + need + " did not complete";
            r.exit_code = exit_code_for(ConfigError(r.error));
            return;
          }
        }
      }

      if (opts.resume &&
          cell_complete(ckpt_path(c.stem), report_path(c.stem), c.expected_config,
                        &r.report)) {
        r.ok = true;
        r.skipped = true;
        return;
      }

      const auto t0 = std::chrono::steady_clock::now();
      try {
        TrainOptions topts;
        topts.cache_teacher_logits = true;
        TrainResult res =
            c.is_probe
                ? train_teacher_probe(c.encoder_ckpt,
                                      c.coarse_data ? coarse_ds() : ds, c.cfg, topts)
                : train_student(c.coarse_data ? coarse_ds() : ds, c.cfg, topts);
        save_checkpoint(res.checkpoint, ckpt_path(c.stem).string());
        save_report(res.report, report_path(c.stem).string());
        r.report = std::move(res.report);
        r.ok = true;
      } catch (const std::exception& e) {
        r.error = e.what();
        r.exit_code = exit_code_for(e);
      }
      r.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });

    for (std::size_t i = 0; i < cells.size(); ++i) {
      const Cell& c = cells[i];
      CellResult& r = results[i];
      {
        std::lock_guard<std::mutex> hold(results_mu);
        done[c.stem] = r.ok;
      }
      if (r.ok) {
        if (c.in_table) outcome.reports.push_back(r.report);
        if (r.skipped) {
          log.line("[grid] " + c.stem + ": skipped (up to date, top1 " +
                   pct1(r.report.test_accuracy) + "%)");
        } else {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.1fs", r.seconds);
          log.line("[grid] " + c.stem + ": done, top1 " +
                   pct1(r.report.test_accuracy) + "% (" + buf + ")");
        }
      } else {
        outcome.failures.emplace_back(c.stem, r.error);
        if (outcome.exit_code == 0) outcome.exit_code = r.exit_code;
        log.line("[grid] " + c.stem + ": FAILED: " + r.error);
      }
    }
  };

  run_stage(stage_pretrain);
  run_stage(stage_teacher);
  run_stage(stage_student);

  if (!outcome.reports.empty()) {
    outcome.table = emit_table(outcome.reports);
    const fs::path results = out / "results.md";
    std::ofstream f(results, std::ios::trunc);
    if (!f || !(f << outcome.table) || (f.flush(), !f)) {
      throw IoError("cannot write " + results.string());
    }
    log.line("[grid] wrote " + results.string());
  }
  return outcome;
}

}  // namespace kd
