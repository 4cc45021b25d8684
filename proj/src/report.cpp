// SPDX-License-Identifier: Apache-2.0

#include "kd/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "binio.hpp"

namespace kd {

double top1_micro(const Tensor& logits, const std::vector<int>& labels) {
  if (!logits.defined() || logits.rank() != 2) {
    throw ShapeError("top1_micro: logits must be [batch x classes]");
  }
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("top1_micro: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  if (n == 0) throw ShapeError("top1_micro: empty batch");
  long long correct = 0;
  for (Index i = 0; i < n; ++i) {
    const double* row = logits.data() + i * c;
    Index arg = 0;
    for (Index j = 1; j < c; ++j) {
      if (row[j] > row[arg]) arg = j;  // ties keep the lower index
    }
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c) {
      throw DataError("top1_micro: label " + std::to_string(label) + " out of range at row " +
                      std::to_string(i));
    }
    if (arg == label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

long long count_params(const ModelSpec& spec) {
  validate(spec);
  long long total = 0;
  auto dense = [](const LayerSpec& l) {
    return static_cast<long long>(l.in) * l.out + l.out;
  };
  for (const LayerSpec& l : spec.layers) {
    if (l.kind == LayerKind::dense) {
      total += dense(l);
    } else if (l.kind == LayerKind::conv2d) {
      total += static_cast<long long>(l.kernel) * l.kernel * l.in_channels * l.out_channels +
               l.out_channels;
    }
  }
  return total + dense(spec.head);
}

long long count_flops(const ModelSpec& spec) {
  validate(spec);
  const std::vector<Shape> shapes = layer_shapes(spec);
  long long total = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape& in = shapes[i];
    const Shape& out = shapes[i + 1];
    switch (l.kind) {
      case LayerKind::dense:
        total += 2LL * l.in * l.out + l.out;
        break;
      case LayerKind::conv2d:
        total += (2LL * l.kernel * l.kernel * l.in_channels + 1) * shape_numel(out);
        break;
      case LayerKind::activation:
        total += shape_numel(out);
        break;
      case LayerKind::pool_mean: {
        const long long window = l.kernel <= 0 ? static_cast<long long>(in[1]) * in[2]
                                               : static_cast<long long>(l.kernel) * l.kernel;
        total += (window + 1) * shape_numel(out);
        break;
      }
      case LayerKind::flatten:
        break;
    }
  }
  return total + 2LL * spec.head.in * spec.head.out + spec.head.out;
}

// ---------------------------------------------------------------------------
// RunReport
// ---------------------------------------------------------------------------

void RunReport::validate() const {
  if (role != "teacher" && role != "student") {
    throw ConfigError("report: role must be teacher or student, is \"" + role + "\"");
  }
  if (test_accuracy < 0.0 || test_accuracy > 1.0) {
    throw ConfigError("report: test accuracy " + std::to_string(test_accuracy) +
                      " outside [0, 1]");
  }
  for (const EpochStat& e : epochs) {
    if (e.val_accuracy < 0.0 || e.val_accuracy > 1.0) {
      throw ConfigError("report: epoch accuracy outside [0, 1]");
    }
  }
  if (param_count <= 0 || forward_flops <= 0) {
    throw ConfigError("report: param and FLOP counts must be positive");
  }
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["role"] = role;
  j["preset"] = preset;
  j["init"] = init;
  j["strategy"] = strategy;
  j["teacher"] = teacher;
  j["seed"] = seed;
  j["config"] = config;
  nlohmann::json eps = nlohmann::json::array();
  for (const EpochStat& e : epochs) {
    eps.push_back({{"train_loss", e.train_loss},
                   {"val_accuracy", e.val_accuracy},
                   {"lr", e.lr}});
  }
  j["epochs"] = eps;
  j["best_epoch"] = best_epoch;
  j["test_accuracy"] = test_accuracy;
  j["param_count"] = param_count;
  j["forward_flops"] = forward_flops;
  j["teacher_path"] = teacher_path;
  j["teacher_digest"] = teacher_digest;
  return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  static const char* known[] = {"role", "preset", "init", "strategy", "teacher",
                                "seed", "config", "epochs", "best_epoch",
                                "test_accuracy", "param_count", "forward_flops",
                                "teacher_path", "teacher_digest"};
  if (!j.is_object()) throw ConfigError("report: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("report: unknown key \"" + it.key() + "\"");
  }
  RunReport r;
  try {
    r.role = j.at("role").get<std::string>();
    r.preset = j.at("preset").get<std::string>();
    r.init = j.at("init").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.teacher = j.at("teacher").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    for (const nlohmann::json& e : j.at("epochs")) {
      EpochStat s;
      s.train_loss = e.at("train_loss").get<double>();
      s.val_accuracy = e.at("val_accuracy").get<double>();
      s.lr = e.at("lr").get<double>();
      r.epochs.push_back(s);
    }
    r.best_epoch = j.at("best_epoch").get<int>();
    r.test_accuracy = j.at("test_accuracy").get<double>();
    r.param_count = j.at("param_count").get<long long>();
    r.forward_flops = j.at("forward_flops").get<long long>();
    r.teacher_path = j.at("teacher_path").get<std::string>();
    r.teacher_digest = j.at("teacher_digest").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
  r.validate();
  return r;
}

void save_report(const RunReport& report, const std::string& path) {
  binio::write_file(path, report.to_json().dump(2) + "\n", "report");
}

RunReport load_report(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(binio::read_file(path, "report"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report: " + path + " is not valid JSON: " + e.what());
  }
  return RunReport::from_json(j);
}

// ---------------------------------------------------------------------------
// Markdown tables
// ---------------------------------------------------------------------------

namespace {

std::string pct(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * accuracy);
  return buf;
}

void emit_section(std::string& out, const char* title,
                  std::vector<const RunReport*> rows) {
  std::sort(rows.begin(), rows.end(), [](const RunReport* a, const RunReport* b) {
    return std::tie(a->preset, a->init, a->strategy, a->teacher, a->seed) <
           std::tie(b->preset, b->init, b->strategy, b->teacher, b->seed);
  });
  out += std::string("## ") + title + "\n\n";
  if (rows.empty()) {
    out += "(none)\n\n";
    return;
  }
  out += "| Model | Init | Strategy | Teacher | Top-1 (%) |\n";
  out += "|---|---|---|---|---|\n";
  for (const RunReport* r : rows) {
    out += "| " + r->preset + " | " + r->init + " | " + r->strategy + " | " +
           (r->teacher.empty() ? std::string("—") : r->teacher) + " | " +
           pct(r->test_accuracy) + " |\n";
  }
  out += "\n";
}

}  // namespace

std::string emit_table(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw ConfigError("emit_table: no reports");
  std::vector<const RunReport*> teachers, students;
  for (const RunReport& r : reports) {
    r.validate();
    (r.role == "teacher" ? teachers : students).push_back(&r);
  }
  std::string out;
  emit_section(out, "Teachers", std::move(teachers));
  emit_section(out, "Students", std::move(students));
  return out;
}

// ---------------------------------------------------------------------------
// Matrix CSV (embedding exports)
// ---------------------------------------------------------------------------

void export_matrix_csv(const Tensor& matrix, const std::string& path) {
  if (!matrix.defined() || matrix.rank() != 2) {
    throw ShapeError("matrix csv: expected a [rows x cols] tensor");
  }
  const Index rows = matrix.dim(0), cols = matrix.dim(1);
  std::string buf;
  for (Index c = 0; c < cols; ++c) {
    buf += (c == 0 ? "f" : ",f") + std::to_string(c);
  }
  buf += "\n";
  char num[40];
  for (Index i = 0; i < rows; ++i) {
    for (Index c = 0; c < cols; ++c) {
      // %.17g prints enough digits to reconstruct any double exactly.
      std::snprintf(num, sizeof num, c == 0 ? "%.17g" : ",%.17g",
                    matrix.values()(i * cols + c));
      buf += num;
    }
    buf += "\n";
  }
  binio::write_file(path, buf, "matrix csv");
}

Tensor import_matrix_csv(const std::string& path) {
  const std::string text = binio::read_file(path, "matrix csv");
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("f0", 0) != 0) {
    throw DataError("matrix csv: line 1: expected an f0,f1,... header");
  }
  const Index cols = static_cast<Index>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<double> values;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.c_str();
    char* end = nullptr;
    for (Index c = 0; c < cols; ++c) {
      if (c > 0) {
        if (*p != ',') {
          throw DataError("matrix csv: line " + std::to_string(line_no) + ": expected " +
                          std::to_string(cols) + " fields");
        }
        ++p;
      }
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw DataError("matrix csv: line " + std::to_string(line_no) +
                        ": bad numeric field " + std::to_string(c));
      }
      values.push_back(v);
      p = end;
    }
    if (*p != '\0') {
      throw DataError("matrix csv: line " + std::to_string(line_no) + ": trailing characters");
    }
  }
  if (values.empty()) throw DataError("matrix csv: no data rows");
  const Index rows = static_cast<Index>(values.size()) / cols;
  return Tensor::from({rows, cols}, std::move(values));
}

}  // namespace kd
