// SPDX-License-Identifier: Apache-2.0

#include "kd/train.hpp"

#include <chrono>
#include <optional>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ostream>

#include "kd/optim.hpp"

namespace kd {

const char* to_string(InitKind k) {
  return k == InitKind::scratch ? "scratch" : "pretrained";
}

const char* to_string(StrategyKind k) {
  return k == StrategyKind::finetune ? "finetune" : "distill";
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (preset.empty()) throw ConfigError("train config: preset must be set");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(lr_max >= lr_min) || lr_min < 0.0) {
    throw ConfigError("train config: need lr_max >= lr_min >= 0");
  }
  if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be >= 0");
  if (init == InitKind::pretrained && pretrained_path.empty()) {
    throw ConfigError("train config: init=pretrained needs a checkpoint path");
  }
  if (strategy == StrategyKind::distill) {
    if (teacher_path.empty()) {
      throw ConfigError("train config: strategy=distill needs a teacher checkpoint path");
    }
    distill.validate();
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["preset"] = preset;
  if (init == InitKind::scratch) {
    j["init"] = "scratch";
  } else {
    j["init"] = {{"pretrained", pretrained_path}};
  }
  if (strategy == StrategyKind::finetune) {
    j["strategy"] = "finetune";
  } else {
    j["strategy"] = {{"distill",
                      {{"teacher", teacher_path},
                       {"temperature", distill.temperature},
                       {"alpha", distill.alpha},
                       {"kl_direction", to_string(distill.direction)}}}};
  }
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr_max"] = lr_max;
  j["lr_min"] = lr_min;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) {
      throw ConfigError(std::string(what) + ": unknown key \"" + it.key() + "\"");
    }
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"preset", "init", "strategy", "epochs", "batch_size", "lr_max",
                     "lr_min", "weight_decay", "seed"},
                 "train config");
  TrainConfig c;
  try {
    c.preset = j.at("preset").get<std::string>();
    if (j.contains("init")) {
      const nlohmann::json& init = j["init"];
      if (init.is_string() && init == "scratch") {
        c.init = InitKind::scratch;
      } else if (init.is_object()) {
        reject_unknown(init, {"pretrained"}, "train config init");
        c.init = InitKind::pretrained;
        c.pretrained_path = init.at("pretrained").get<std::string>();
      } else {
        throw ConfigError(
            "train config: init must be \"scratch\" or {\"pretrained\": path}");
      }
    }
    if (j.contains("strategy")) {
      const nlohmann::json& st = j["strategy"];
      if (st.is_string() && st == "finetune") {
        c.strategy = StrategyKind::finetune;
      } else if (st.is_object()) {
        reject_unknown(st, {"distill"}, "train config strategy");
        const nlohmann::json& d = st.at("distill");
        reject_unknown(d, {"teacher", "temperature", "alpha", "kl_direction"},
                       "train config distill");
        c.strategy = StrategyKind::distill;
        c.teacher_path = d.at("teacher").get<std::string>();
        c.distill.temperature = d.value("temperature", c.distill.temperature);
        c.distill.alpha = d.value("alpha", c.distill.alpha);
        if (d.contains("kl_direction")) {
          c.distill.direction = kl_direction_from_string(d["kl_direction"].get<std::string>());
        }
      } else {
        throw ConfigError(
            "train config: strategy must be \"finetune\" or {\"distill\": {...}}");
      }
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_max = j.value("lr_max", c.lr_max);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Split evaluation
// ---------------------------------------------------------------------------

namespace {

/// Copies rows [at, at+count) of the dataset into a fresh batch tensor.
Tensor dataset_rows(const Dataset& ds, Index at, Index count) {
  Shape shape = ds.features.shape();
  shape[0] = count;
  Tensor out = Tensor::zeros(shape);
  const Index row = shape_numel(ds.sample_shape());
  std::memcpy(out.data(), ds.features.data() + at * row,
              sizeof(double) * static_cast<std::size_t>(count * row));
  return out;
}

/// Rows of `matrix` ([N x W]) selected by dataset indices.
Tensor gather_rows(const Tensor& matrix, const std::vector<Index>& indices) {
  const Index w = matrix.dim(1);
  Tensor out = Tensor::zeros({static_cast<Index>(indices.size()), w});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::memcpy(out.data() + static_cast<Index>(k) * w, matrix.data() + indices[k] * w,
                sizeof(double) * static_cast<std::size_t>(w));
  }
  return out;
}

template <typename Fn>
Tensor map_split(const Dataset& ds, Split split, Index chunk, Index out_width, Fn fn) {
  if (chunk < 1) throw ConfigError("split evaluation: chunk must be >= 1");
  const SplitRange& r = ds.range(split);
  if (r.size() == 0) {
    throw DataError("split evaluation: split '" + std::string(to_string(split)) +
                    "' is empty");
  }
  Tensor out = Tensor::zeros({r.size(), out_width});
  for (Index at = r.begin; at < r.end; at += chunk) {
    const Index n = std::min(chunk, r.end - at);
    const Tensor batch_out = fn(dataset_rows(ds, at, n));
    std::memcpy(out.data() + (at - r.begin) * out_width, batch_out.data(),
                sizeof(double) * static_cast<std::size_t>(n * out_width));
  }
  return out;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

Tensor split_logits(const Model& model, const Dataset& ds, Split split, Index chunk) {
  return map_split(ds, split, chunk, model.num_classes(),
                   [&](const Tensor& rows) { return model.forward(nullptr, rows); });
}

Tensor split_embeddings(const Model& model, const Dataset& ds, Split split, Index chunk) {
  return map_split(ds, split, chunk, model.feature_width(),
                   [&](const Tensor& rows) { return model.embed(nullptr, rows); });
}

double evaluate(const Model& model, const Dataset& ds, Split split, Index chunk) {
  return top1_micro(split_logits(model, ds, split, chunk), split_labels(ds, split));
}

// ---------------------------------------------------------------------------
// Shared training loop
// ---------------------------------------------------------------------------

namespace {

struct LoopOutcome {
  Checkpoint checkpoint;
  std::vector<EpochStat> stats;
  int best_epoch = 0;
};

/// The per-epoch skeleton shared by probes and students: shuffled batches,
/// a caller-supplied step function, epoch metrics, best-val selection with
/// ties to the earlier epoch (last epoch when there is no val split).
template <typename StepFn, typename AccFn>
LoopOutcome run_epochs(const Dataset& ds, const TrainConfig& cfg, const Model& model,
                       const CosineSchedule& sched, const TrainOptions& opts,
                       StepFn step_fn, AccFn accuracy_fn) {
  const bool has_val = ds.val_range.size() > 0;
  const Index train_n = ds.train_range.size();
  LoopOutcome out;
  double best_val = -1.0;
  long step = 0;
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr_first = lr_at(sched, step);
    double loss_sum = 0.0;
    for (const Batch& b : batches(ds, Split::train, cfg.batch_size, cfg.seed, epoch)) {
      const double lv = step_fn(b, step, epoch);
      loss_sum += lv * static_cast<double>(b.features.dim(0));
      ++step;
    }
    EpochStat stat;
    stat.train_loss = loss_sum / static_cast<double>(train_n);
    stat.val_accuracy = accuracy_fn(has_val ? Split::val : Split::train);
    stat.lr = lr_first;
    out.stats.push_back(stat);
    if (opts.log) {
      *opts.log << "epoch " << epoch << " train_loss " << format_g(stat.train_loss)
                << " val_acc " << format_g(stat.val_accuracy) << " lr "
                << format_g(stat.lr) << "\n";
    }
    if (has_val && stat.val_accuracy > best_val) {
      best_val = stat.val_accuracy;
      out.best_epoch = static_cast<int>(epoch);
      out.checkpoint = checkpoint_from_model(model);
    }
  }
  if (!has_val) {
    out.best_epoch = static_cast<int>(cfg.epochs);
    out.checkpoint = checkpoint_from_model(model);
  }
  return out;
}

void check_finite(double loss, long step, long epoch) {
  if (!std::isfinite(loss)) {
    throw NumericError("train: non-finite loss (" + std::to_string(loss) +
                       ") at step " + std::to_string(step) + ", epoch " +
                       std::to_string(epoch) + "; run aborted");
  }
}

void zero_param_grads(Model& model) {
  for (auto& p : model.params()) {
    if (p.tensor.requires_grad()) p.tensor.zero_grad();
  }
}

Split reported_split(const Dataset& ds) {
  if (ds.test_range.size() > 0) return Split::test;
  if (ds.val_range.size() > 0) return Split::val;
  return Split::train;
}

CosineSchedule make_schedule(const Dataset& ds, const TrainConfig& cfg) {
  const long steps_per_epoch =
      static_cast<long>((ds.train_range.size() + cfg.batch_size - 1) / cfg.batch_size);
  return {cfg.lr_max, cfg.lr_min, cfg.epochs * steps_per_epoch};
}

}  // namespace

// ---------------------------------------------------------------------------
// Student training
// ---------------------------------------------------------------------------

TrainResult train_student(const Dataset& ds, const TrainConfig& cfg,
                          const TrainOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  ds.validate();

  const ModelSpec spec = make_preset(cfg.preset, ds.sample_shape(), ds.num_classes);
  Model model = cfg.init == InitKind::scratch
                    ? init_truncated_normal(spec, kDefaultInitStd, cfg.seed)
                    : load_pretrained(spec, cfg.pretrained_path, cfg.seed);

  // Teacher setup. With alpha == 0 the KD term vanishes, so the teacher is
  // validated but never run: the step stream is then identical to finetune.
  std::optional<Model> teacher;
  std::string teacher_label;
  std::uint32_t teacher_digest = 0;
  bool run_teacher = false;
  if (cfg.strategy == StrategyKind::distill) {
    const Checkpoint tck = load_checkpoint(cfg.teacher_path);
    teacher.emplace(model_from_checkpoint(tck));
    if (teacher->num_classes() != ds.num_classes) {
      throw ConfigError("train: teacher classifies " +
                        std::to_string(teacher->num_classes()) + " classes, dataset has " +
                        std::to_string(ds.num_classes));
    }
    if (teacher->spec().input_shape != ds.sample_shape()) {
      throw ShapeError("train: teacher expects input " +
                       shape_str(teacher->spec().input_shape) + ", dataset samples are " +
                       shape_str(ds.sample_shape()));
    }
    teacher_label = teacher->spec().name;
    teacher_digest = tck.spec_digest;
    run_teacher = cfg.distill.alpha > 0.0;
  }

  // Optional cache: all train-row teacher logits in one pass. Row outputs
  // do not depend on batch composition, so gathers equal live forwards.
  Tensor logit_cache;
  if (run_teacher && opts.cache_teacher_logits) {
    const Tensor train_logits = split_logits(*teacher, ds, Split::train);
    logit_cache = Tensor::zeros({ds.size(), ds.num_classes});
    std::memcpy(logit_cache.data() + ds.train_range.begin * ds.num_classes,
                train_logits.data(),
                sizeof(double) *
                    static_cast<std::size_t>(train_logits.numel()));
  }

  DistillConfig loss_cfg;  // finetune: pure cross-entropy via alpha = 0
  loss_cfg.alpha = 0.0;
  if (cfg.strategy == StrategyKind::distill) loss_cfg = cfg.distill;

  const CosineSchedule sched = make_schedule(ds, cfg);
  AdamW opt(model.optim_slots(), cfg.weight_decay);

  LoopOutcome outcome = run_epochs(
      ds, cfg, model, sched, opts,
      [&](const Batch& b, long step, long epoch) {
        Tape tape;
        const Tensor logits = model.forward(&tape, b.features);
        Tensor teacher_logits;
        if (run_teacher) {
          teacher_logits = logit_cache.defined()
                               ? gather_rows(logit_cache, b.indices)
                               : teacher->forward(nullptr, b.features);
        }
        const Tensor loss = total_loss(&tape, logits, teacher_logits, b.labels, loss_cfg);
        const double lv = loss.values()(0);
        check_finite(lv, step, epoch);
        zero_param_grads(model);
        tape.backward(loss);
        opt.step(lr_at(sched, step));
        return lv;
      },
      [&](Split s) { return evaluate(model, ds, s); });

  // Test accuracy comes from the rounded parameters actually persisted, so
  // an eval of the saved checkpoint reproduces the stored number exactly.
  const Model final_model = model_for_spec(outcome.checkpoint, spec);
  const double test_acc = evaluate(final_model, ds, reported_split(ds));

  RunReport rep;
  rep.role = "student";
  rep.preset = cfg.preset;
  rep.init = to_string(cfg.init);
  rep.strategy = to_string(cfg.strategy);
  rep.teacher = teacher_label;
  rep.seed = cfg.seed;
  rep.config = cfg.to_json();
  rep.epochs = outcome.stats;
  rep.best_epoch = outcome.best_epoch;
  rep.test_accuracy = test_acc;
  rep.param_count = count_params(spec);
  rep.forward_flops = count_flops(spec);
  if (cfg.strategy == StrategyKind::distill) {
    rep.teacher_path = cfg.teacher_path;
    rep.teacher_digest = teacher_digest;
  }
  rep.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.validate();

  outcome.checkpoint.metadata["role"] = "student";
  outcome.checkpoint.metadata["config"] = cfg.to_json();
  outcome.checkpoint.metadata["epoch"] = outcome.best_epoch;
  outcome.checkpoint.metadata["metrics"] = {{"test_accuracy", test_acc}};
  return {std::move(outcome.checkpoint), std::move(rep)};
}

// ---------------------------------------------------------------------------
// Teacher probe
// ---------------------------------------------------------------------------

TrainResult train_teacher_probe(const std::string& encoder_ckpt, const Dataset& ds,
                                const TrainConfig& cfg, const TrainOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  ds.validate();
  if (cfg.strategy != StrategyKind::finetune) {
    throw ConfigError("probe: trains the head with plain cross-entropy; "
                      "use strategy=finetune");
  }

  const ModelSpec spec = make_preset(cfg.preset, ds.sample_shape(), ds.num_classes);
  Model model = load_pretrained(spec, encoder_ckpt, cfg.seed);
  model.freeze_encoder();

  // One pass of the frozen encoder over every row; epochs then touch only
  // the head. Identical to forwarding the full model each step.
  Tensor emb = Tensor::zeros({ds.size(), model.feature_width()});
  for (Split s : {Split::train, Split::val, Split::test}) {
    if (ds.range(s).size() == 0) continue;
    const Tensor part = split_embeddings(model, ds, s);
    std::memcpy(emb.data() + ds.range(s).begin * model.feature_width(), part.data(),
                sizeof(double) * static_cast<std::size_t>(part.numel()));
  }

  const CosineSchedule sched = make_schedule(ds, cfg);
  AdamW opt(model.optim_slots(), cfg.weight_decay);  // head only: encoder is frozen

  LoopOutcome outcome = run_epochs(
      ds, cfg, model, sched, opts,
      [&](const Batch& b, long step, long epoch) {
        Tape tape;
        const Tensor logits = model.head_forward(&tape, gather_rows(emb, b.indices));
        const Tensor loss = cross_entropy(&tape, logits, b.labels);
        const double lv = loss.values()(0);
        check_finite(lv, step, epoch);
        zero_param_grads(model);
        tape.backward(loss);
        opt.step(lr_at(sched, step));
        return lv;
      },
      [&](Split s) {
        const SplitRange& r = ds.range(s);
        Tensor rows = Tensor::zeros({r.size(), model.feature_width()});
        std::memcpy(rows.data(), emb.data() + r.begin * model.feature_width(),
                    sizeof(double) * static_cast<std::size_t>(rows.numel()));
        return top1_micro(model.head_forward(nullptr, rows), split_labels(ds, s));
      });

  const Model final_model = model_for_spec(outcome.checkpoint, spec);
  const double test_acc = evaluate(final_model, ds, reported_split(ds));

  nlohmann::json echo = cfg.to_json();
  echo["init"] = {{"pretrained", encoder_ckpt}};

  RunReport rep;
  rep.role = "teacher";
  rep.preset = cfg.preset;
  rep.init = "pretrained";
  rep.strategy = "probe";
  rep.seed = cfg.seed;
  rep.config = echo;
  rep.epochs = outcome.stats;
  rep.best_epoch = outcome.best_epoch;
  rep.test_accuracy = test_acc;
  rep.param_count = count_params(spec);
  rep.forward_flops = count_flops(spec);
  rep.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.validate();

  outcome.checkpoint.metadata["role"] = "teacher";
  outcome.checkpoint.metadata["config"] = echo;
  outcome.checkpoint.metadata["epoch"] = outcome.best_epoch;
  outcome.checkpoint.metadata["metrics"] = {{"test_accuracy", test_acc}};
  return {std::move(outcome.checkpoint), std::move(rep)};
}

}  // namespace kd
