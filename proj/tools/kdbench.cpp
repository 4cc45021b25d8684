// SPDX-License-Identifier: Apache-2.0
//
// kdbench: command-line front end for the distillation benchmark pipeline.
// Each subcommand is a thin shell over one library call; all real behavior
// (and all validation) lives in the library. Exit codes: 0 success,
// 2 configuration error, 3 data error, 4 numeric failure, 5 I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kd/checkpoint.hpp"
#include "kd/data.hpp"
#include "kd/errors.hpp"
#include "kd/experiment.hpp"
#include "kd/report.hpp"
#include "kd/train.hpp"

namespace {

nlohmann::json read_json(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw kd::IoError(std::string("cannot open ") + what + " " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw kd::ConfigError(std::string(what) + " " + path + ": " + e.what());
  }
}

kd::Dataset load_data(const std::string& path) {
  return kd::load_dataset(path, kd::data_format_for_path(path));
}

kd::Split split_from_string(const std::string& s) {
  if (s == "train") return kd::Split::train;
  if (s == "val") return kd::Split::val;
  if (s == "test") return kd::Split::test;
  throw kd::ConfigError("split must be train, val, or test (got \"" + s + "\")");
}

/// <stem>.ckpt -> <stem>.report.json; anything else gets .report.json added.
std::string report_path_for(const std::string& ckpt_path) {
  const std::string ext = ".ckpt";
  if (ckpt_path.size() > ext.size() &&
      ckpt_path.compare(ckpt_path.size() - ext.size(), ext.size(), ext) == 0) {
    return ckpt_path.substr(0, ckpt_path.size() - ext.size()) + ".report.json";
  }
  return ckpt_path + ".report.json";
}

void cmd_gen_data(const std::string& spec_path, const std::string& out_path) {
  const kd::GenSpec spec = kd::GenSpec::from_json(read_json(spec_path, "spec"));
  const kd::Dataset ds = kd::generate(spec);
  kd::save_dataset(ds, out_path, kd::data_format_for_path(out_path));
  std::printf("wrote %s: %ld samples, %ld classes (train %ld, val %ld, test %ld)\n",
              out_path.c_str(), static_cast<long>(ds.size()),
              static_cast<long>(ds.num_classes),
              static_cast<long>(ds.train_range.size()),
              static_cast<long>(ds.val_range.size()),
              static_cast<long>(ds.test_range.size()));
  std::vector<long> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (int l : ds.labels) counts[static_cast<std::size_t>(l)]++;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::printf("class %zu: %ld\n", c, counts[c]);
  }
}

void save_outputs(const kd::TrainResult& res, const std::string& out_path) {
  kd::save_checkpoint(res.checkpoint, out_path);
  const std::string rp = report_path_for(out_path);
  kd::save_report(res.report, rp);
  std::printf("wrote %s\n", out_path.c_str());
  std::printf("wrote %s\n", rp.c_str());
  std::printf("test_accuracy %.17g\n", res.report.test_accuracy);
}

void cmd_train_student(const std::string& data_path, const std::string& config_path,
                       const std::string& out_path, const std::uint64_t* seed) {
  kd::TrainConfig cfg = kd::TrainConfig::from_json(read_json(config_path, "config"));
  if (seed) cfg.seed = *seed;
  const kd::Dataset ds = load_data(data_path);
  kd::TrainOptions opts;
  opts.log = &std::cout;
  save_outputs(kd::train_student(ds, cfg, opts), out_path);
}

void cmd_train_teacher(const std::string& data_path, const std::string& config_path,
                       const std::string& out_path, const std::uint64_t* seed) {
  kd::TrainConfig cfg = kd::TrainConfig::from_json(read_json(config_path, "config"));
  if (seed) cfg.seed = *seed;
  if (cfg.init != kd::InitKind::pretrained) {
    throw kd::ConfigError(
        "train-teacher: config must set init {\"pretrained\": <encoder "
        "checkpoint>}; the probe adopts and freezes that encoder");
  }
  const kd::Dataset ds = load_data(data_path);
  kd::TrainOptions opts;
  opts.log = &std::cout;
  save_outputs(kd::train_teacher_probe(cfg.pretrained_path, ds, cfg, opts), out_path);
}

void cmd_eval(const std::string& ckpt_path, const std::string& data_path,
              const std::string& split_name, const std::string& embeddings_path) {
  const kd::Checkpoint ck = kd::load_checkpoint(ckpt_path);
  const kd::Model model = kd::model_from_checkpoint(ck);
  const kd::Dataset ds = load_data(data_path);
  const kd::Split split = split_from_string(split_name);
  const double acc = kd::evaluate(model, ds, split);
  std::printf("top1 %.17g\n", acc);
  if (!embeddings_path.empty()) {
    kd::export_matrix_csv(kd::split_embeddings(model, ds, split), embeddings_path);
    std::printf("wrote %s\n", embeddings_path.c_str());
  }
}

void cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  std::vector<kd::RunReport> reports;
  reports.reserve(inputs.size());
  for (const std::string& path : inputs) reports.push_back(kd::load_report(path));
  const std::string table = kd::emit_table(reports);
  std::fputs(table.c_str(), stdout);
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::trunc);
    if (!f || !(f << table) || (f.flush(), !f)) {
      throw kd::IoError("cannot write " + out_path);
    }
  }
}

int cmd_grid(const std::string& config_path, const std::string& out_dir,
             const std::uint64_t* seed, int jobs, bool resume) {
  nlohmann::json j = read_json(config_path, "experiment file");
  if (seed) {
    if (!j.is_object()) throw kd::ConfigError("experiment file: expected a JSON object");
    j["seed"] = *seed;  // applied before parsing so defaulted student seeds follow
  }
  const kd::ExperimentFile ex = kd::ExperimentFile::from_json(j);
  kd::GridOptions opts;
  opts.jobs = jobs;
  opts.resume = resume;
  opts.log = &std::cout;
  const kd::GridOutcome out = kd::run_grid(ex, out_dir, opts);
  std::fputs(out.table.c_str(), stdout);
  for (const auto& [cell, err] : out.failures) {
    std::cerr << "failed cell " << cell << ": " << err << "\n";
  }
  return out.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-distillation benchmark pipeline"};
  app.require_subcommand(1);

  std::string spec_path, data_path, config_path, ckpt_path, out_path;
  std::string split_name = "test";
  std::string embeddings_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
  bool resume = false;
  std::vector<std::string> report_inputs;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Generation spec (JSON)")->required();
  gen->add_option("--out", out_path, "Output dataset path (.csv for text, else packed)")
      ->required();
  gen->callback([&] { cmd_gen_data(spec_path, out_path); });

  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--data", data_path, "Dataset path")->required();
    cmd->add_option("--config", config_path, "Train config (JSON)")->required();
    cmd->add_option("--out", out_path, "Output checkpoint path")->required();
    cmd->add_option("--seed", seed, "Override the config seed")
        ->each([&](const std::string&) { seed_given = true; });
  };

  CLI::App* ts = app.add_subcommand("train-student", "Train a student model");
  add_train_flags(ts);
  ts->callback([&] {
    cmd_train_student(data_path, config_path, out_path, seed_given ? &seed : nullptr);
  });

  CLI::App* tt = app.add_subcommand(
      "train-teacher", "Probe-train a teacher head over a frozen pretrained encoder");
  add_train_flags(tt);
  tt->callback([&] {
    cmd_train_teacher(data_path, config_path, out_path, seed_given ? &seed : nullptr);
  });

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  ev->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  ev->add_option("--data", data_path, "Dataset path")->required();
  ev->add_option("--split", split_name, "train, val, or test (default test)");
  ev->add_option("--embeddings", embeddings_path,
                 "Also export encoder features for the split as CSV");
  ev->callback([&] { cmd_eval(ckpt_path, data_path, split_name, embeddings_path); });

  CLI::App* rp = app.add_subcommand("report", "Render run reports as a markdown table");
  rp->add_option("reports", report_inputs, "RunReport JSON files")->required();
  rp->add_option("--out", out_path, "Also write the table to this file");
  rp->callback([&] { cmd_report(report_inputs, out_path); });

  int grid_code = 0;
  CLI::App* gr = app.add_subcommand("grid", "Run every cell of an experiment file");
  gr->add_option("--config", config_path, "Experiment file (JSON)")->required();
  gr->add_option("--out", out_path, "Output directory")->required();
  gr->add_option("--seed", seed, "Override the experiment seed")
      ->each([&](const std::string&) { seed_given = true; });
  gr->add_option("--jobs", jobs, "Parallel cells (default 1)")
      ->check(CLI::PositiveNumber);
  gr->add_flag("--resume", resume, "Skip cells whose artifacts already match");
  gr->callback([&] {
    grid_code = cmd_grid(config_path, out_path, seed_given ? &seed : nullptr, jobs,
                         resume);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;     // bad flags are configuration errors
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kd::exit_code_for(e);
  }
  return grid_code;
}
