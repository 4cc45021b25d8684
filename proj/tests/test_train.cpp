// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kd/train.hpp"

using namespace kd;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("/tmp/kd_train_test_") + name;
}

Dataset small_dataset(std::uint64_t seed = 3, Index classes = 4, Index per_class = 30) {
  GenSpec g;
  g.num_classes = classes;
  g.samples_per_class = per_class;
  g.feature_dim = 8;
  g.subclusters = 2;
  g.subclass_spread = 0.3;
  g.noise = 0.5;
  g.seed = seed;
  return generate(g);
}

TrainConfig quick_config(const std::string& preset, int epochs = 3) {
  TrainConfig c;
  c.preset = preset;
  c.epochs = epochs;
  c.batch_size = 16;
  c.seed = 11;
  return c;
}

bool params_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].first != b.tensors[i].first) return false;
    const Tensor& x = a.tensors[i].second;
    const Tensor& y = b.tensors[i].second;
    if (x.shape() != y.shape()) return false;
    if (std::memcmp(x.data(), y.data(),
                    sizeof(double) * static_cast<std::size_t>(x.numel())) != 0) {
      return false;
    }
  }
  return true;
}

double max_param_delta(const Checkpoint& a, const Checkpoint& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    for (Index k = 0; k < a.tensors[i].second.numel(); ++k) {
      m = std::max(m, std::abs(a.tensors[i].second.values()(k) -
                               b.tensors[i].second.values()(k)));
    }
  }
  return m;
}

}  // namespace

TEST_CASE("train config json round trip and validation") {
  TrainConfig c;
  c.preset = "dense-s";
  c.init = InitKind::pretrained;
  c.pretrained_path = "/tmp/enc.ckpt";
  c.strategy = StrategyKind::distill;
  c.teacher_path = "/tmp/teacher.ckpt";
  c.distill.temperature = 3.0;
  c.distill.alpha = 0.25;
  c.distill.direction = KlDirection::student_to_teacher;
  c.epochs = 12;
  c.batch_size = 32;
  c.lr_max = 2e-4;
  c.lr_min = 2e-6;
  c.weight_decay = 5e-4;
  c.seed = 99;

  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.preset == c.preset);
  CHECK(back.init == InitKind::pretrained);
  CHECK(back.pretrained_path == c.pretrained_path);
  CHECK(back.strategy == StrategyKind::distill);
  CHECK(back.teacher_path == c.teacher_path);
  CHECK(back.distill.temperature == 3.0);
  CHECK(back.distill.alpha == 0.25);
  CHECK(back.distill.direction == KlDirection::student_to_teacher);
  CHECK(back.epochs == 12);
  CHECK(back.batch_size == 32);
  CHECK(back.lr_max == 2e-4);
  CHECK(back.seed == 99);

  SUBCASE("defaults") {
    const TrainConfig d = TrainConfig::from_json({{"preset", "dense-t"}});
    CHECK(d.init == InitKind::scratch);
    CHECK(d.strategy == StrategyKind::finetune);
    CHECK(d.epochs == 30);
    CHECK(d.batch_size == 64);
    CHECK(d.lr_max == 1e-4);
    CHECK(d.lr_min == 1e-6);
    CHECK(d.weight_decay == 1e-4);
  }
  SUBCASE("unknown keys rejected at every level") {
    nlohmann::json j = c.to_json();
    j["extra"] = 1;
    CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["strategy"]["distill"]["bogus"] = 1;
    CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["init"] = {{"scratch", true}};
    CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
  }
  SUBCASE("invariants") {
    TrainConfig bad = c;
    bad.teacher_path.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.distill.alpha = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.init = InitKind::pretrained;
    bad.pretrained_path.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("train_student: basic run, learning, determinism") {
  const Dataset ds = small_dataset();
  TrainConfig cfg = quick_config("dense-t", 8);

  std::ostringstream log;
  TrainOptions opts;
  opts.log = &log;
  const TrainResult a = train_student(ds, cfg, opts);

  CHECK(a.report.role == "student");
  CHECK(a.report.init == "scratch");
  CHECK(a.report.strategy == "finetune");
  CHECK(a.report.teacher.empty());
  REQUIRE(static_cast<long>(a.report.epochs.size()) == cfg.epochs);
  // Learning on an easy dataset: the last epoch's mean loss beats the first.
  CHECK(a.report.epochs.back().train_loss < a.report.epochs.front().train_loss);
  CHECK(a.report.epochs.front().lr == cfg.lr_max);
  CHECK(a.report.best_epoch >= 1);
  CHECK(a.report.best_epoch <= cfg.epochs);
  CHECK(a.report.param_count > 0);
  CHECK(a.report.wall_clock_seconds > 0.0);

  SUBCASE("epoch log lines are machine-parsable") {
    std::istringstream lines(log.str());
    std::string word;
    long n = 0;
    std::string line;
    while (std::getline(lines, line)) {
      ++n;
      std::istringstream ls(line);
      long epoch = 0;
      double loss = -1, acc = -1, lr = -1;
      std::string k1, k2, k3, k4;
      ls >> k1 >> epoch >> k2 >> loss >> k3 >> acc >> k4 >> lr;
      CHECK(k1 == "epoch");
      CHECK(k2 == "train_loss");
      CHECK(k3 == "val_acc");
      CHECK(k4 == "lr");
      CHECK(epoch == n);
      // Lines print 9 significant digits; enough for plots, not bit-exact.
      CHECK(loss == doctest::Approx(a.report.epochs[static_cast<std::size_t>(n - 1)].train_loss)
                        .epsilon(1e-8));
      CHECK(lr > 0);
    }
    CHECK(n == cfg.epochs);
  }

  SUBCASE("bitwise reproducibility of checkpoint and report") {
    const TrainResult b = train_student(ds, cfg);
    CHECK(params_equal(a.checkpoint, b.checkpoint));
    // Canonical report form excludes timing; everything else is identical.
    RunReport ra = a.report, rb = b.report;
    ra.wall_clock_seconds = rb.wall_clock_seconds = 0.0;
    CHECK(ra.to_json().dump() == rb.to_json().dump());

    TrainConfig other = cfg;
    other.seed = cfg.seed + 1;
    const TrainResult c = train_student(ds, other);
    CHECK_FALSE(params_equal(a.checkpoint, c.checkpoint));
  }

  SUBCASE("report accuracy is reproduced exactly by evaluating the checkpoint") {
    const Model m = model_from_checkpoint(a.checkpoint);
    CHECK(evaluate(m, ds, Split::test) == a.report.test_accuracy);
  }
}

TEST_CASE("train_student: distill with alpha=0 equals finetune") {
  const Dataset ds = small_dataset(5);

  // Build a teacher of a different preset.
  TrainConfig tcfg = quick_config("dense-s", 4);
  const TrainResult teacher = train_student(ds, tcfg);
  const std::string teacher_path = tmp_path("teacher_a0.ckpt");
  save_checkpoint(teacher.checkpoint, teacher_path);

  TrainConfig fin = quick_config("dense-t", 4);
  TrainConfig dis = fin;
  dis.strategy = StrategyKind::distill;
  dis.teacher_path = teacher_path;
  dis.distill.alpha = 0.0;

  const TrainResult a = train_student(ds, fin);
  const TrainResult b = train_student(ds, dis);
  CHECK(params_equal(a.checkpoint, b.checkpoint));  // stronger than the 1e-12 contract
  CHECK(max_param_delta(a.checkpoint, b.checkpoint) == 0.0);
  CHECK(b.report.strategy == "distill");
  CHECK(b.report.teacher == "dense-s");
  CHECK(b.report.teacher_path == teacher_path);
  std::remove(teacher_path.c_str());
}

TEST_CASE("train_student: self-distillation at alpha=1 starts at loss zero") {
  const Dataset ds = small_dataset(7);
  // Teacher := the student's own initial weights (same preset, same seed).
  TrainConfig scfg = quick_config("dense-t", 1);
  const ModelSpec spec = make_preset("dense-t", ds.sample_shape(), ds.num_classes);
  const Model initial = init_truncated_normal(spec, kDefaultInitStd, scfg.seed);
  const std::string path = tmp_path("self_teacher.ckpt");
  save_checkpoint(checkpoint_from_model(initial), path);

  TrainConfig cfg = scfg;
  cfg.strategy = StrategyKind::distill;
  cfg.teacher_path = path;
  cfg.distill.alpha = 1.0;

  const TrainResult r = train_student(ds, cfg);
  CHECK(r.report.epochs[0].train_loss >= 0.0);

  // Step 0 exactly as the loop runs it: a fresh init equals the loaded
  // teacher bitwise (init values are float32-representable), so the KD loss
  // is exactly zero before the first update.
  const Model student = init_truncated_normal(spec, kDefaultInitStd, cfg.seed);
  const Model teacher = model_from_checkpoint(load_checkpoint(path));
  const auto bs = batches(ds, Split::train, cfg.batch_size, cfg.seed, 1);
  const Tensor slog = student.forward(nullptr, bs[0].features);
  const Tensor tlog = teacher.forward(nullptr, bs[0].features);
  const Tensor loss = kd_loss(nullptr, slog, tlog, cfg.distill.temperature);
  CHECK(loss.values()(0) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("train_student: cached teacher logits match live teacher forwards") {
  const Dataset ds = small_dataset(9);
  TrainConfig tcfg = quick_config("dense-s", 3);
  const TrainResult teacher = train_student(ds, tcfg);
  const std::string path = tmp_path("cache_teacher.ckpt");
  save_checkpoint(teacher.checkpoint, path);
  const std::string teacher_bytes_before = [&] {
    std::ifstream f(path, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(f),
                       std::istreambuf_iterator<char>()};
  }();

  TrainConfig cfg = quick_config("dense-t", 4);
  cfg.strategy = StrategyKind::distill;
  cfg.teacher_path = path;

  TrainOptions live, cached;
  cached.cache_teacher_logits = true;
  const TrainResult a = train_student(ds, cfg, live);
  const TrainResult b = train_student(ds, cfg, cached);
  CHECK(params_equal(a.checkpoint, b.checkpoint));
  RunReport ra = a.report, rb = b.report;
  ra.wall_clock_seconds = rb.wall_clock_seconds = 0.0;
  CHECK(ra.to_json().dump() == rb.to_json().dump());

  SUBCASE("teacher checkpoint file is byte-identical after student runs") {
    std::ifstream f(path, std::ios::binary);
    const std::string after{std::istreambuf_iterator<char>(f),
                            std::istreambuf_iterator<char>()};
    CHECK(after == teacher_bytes_before);
  }
  std::remove(path.c_str());
}

TEST_CASE("train_student: teacher mismatches are rejected") {
  const Dataset ds = small_dataset(2, 4);
  const Dataset other = small_dataset(2, 6);  // different class count
  TrainConfig tcfg = quick_config("dense-s", 1);
  const TrainResult teacher = train_student(other, tcfg);
  const std::string path = tmp_path("mismatch_teacher.ckpt");
  save_checkpoint(teacher.checkpoint, path);

  TrainConfig cfg = quick_config("dense-t", 1);
  cfg.strategy = StrategyKind::distill;
  cfg.teacher_path = path;
  try {
    train_student(ds, cfg);
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("6 classes") != std::string::npos);
    CHECK(std::string(e.what()).find("4") != std::string::npos);
  }
  CHECK_THROWS_AS(
      [&] {
        TrainConfig c2 = cfg;
        c2.teacher_path = tmp_path("does_not_exist.ckpt");
        train_student(ds, c2);
      }(),
      IoError);
  std::remove(path.c_str());
}

TEST_CASE("train_student: diverging run aborts with the step index") {
  const Dataset ds = small_dataset(4);
  TrainConfig cfg = quick_config("dense-t", 2);
  cfg.lr_max = 1e150;  // decay factor 1 - lr*wd overflows the parameters
  cfg.lr_min = 1e150;
  try {
    train_student(ds, cfg);
    CHECK(false);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("train_student: val-less dataset selects the last epoch") {
  Dataset ds = small_dataset(6);
  // Fold the val rows into train: [train+val | test], no val split.
  ds.train_range = {0, ds.val_range.end};
  ds.val_range = {ds.train_range.end, ds.train_range.end};
  ds.validate();

  TrainConfig cfg = quick_config("dense-t", 3);
  const TrainResult r = train_student(ds, cfg);
  CHECK(r.report.best_epoch == 3);
  // Epoch metric falls back to train accuracy; it must still be populated.
  for (const EpochStat& e : r.report.epochs) {
    CHECK(e.val_accuracy >= 0.0);
    CHECK(e.val_accuracy <= 1.0);
  }
}

TEST_CASE("train_teacher_probe: frozen encoder, trained head") {
  // Pretraining substitute: any saved model of the right preset.
  const Dataset pre_ds = small_dataset(12, 4, 40);
  TrainConfig pre_cfg = quick_config("dense-s", 3);
  const TrainResult pre = train_student(pre_ds, pre_cfg);
  const std::string enc_path = tmp_path("probe_encoder.ckpt");
  save_checkpoint(pre.checkpoint, enc_path);

  const Dataset ds = small_dataset(13, 4, 40);
  TrainConfig cfg = quick_config("dense-s", 4);
  const TrainResult probe = train_teacher_probe(enc_path, ds, cfg);

  CHECK(probe.report.role == "teacher");
  CHECK(probe.report.strategy == "probe");
  CHECK(probe.report.init == "pretrained");

  SUBCASE("encoder tensors are byte-identical to the input checkpoint") {
    for (const auto& [name, tensor] : probe.checkpoint.tensors) {
      if (name.rfind("head.", 0) == 0) continue;
      const Tensor* src = pre.checkpoint.find(name);
      REQUIRE(src != nullptr);
      CHECK(std::memcmp(tensor.data(), src->data(),
                        sizeof(double) * static_cast<std::size_t>(tensor.numel())) == 0);
    }
    // And the head did train.
    const Tensor* h0 = pre.checkpoint.find("head.w");
    const Tensor* h1 = probe.checkpoint.find("head.w");
    REQUIRE((h0 && h1));
    CHECK(std::memcmp(h0->data(), h1->data(),
                      sizeof(double) * static_cast<std::size_t>(h0->numel())) != 0);
  }

  SUBCASE("probe beats the majority-class baseline") {
    const auto hist = ds.class_histogram();
    Index majority = 0;
    for (Index c : hist) majority = std::max(majority, c);
    const double baseline =
        static_cast<double>(majority) / static_cast<double>(ds.size());
    CHECK(probe.report.test_accuracy >= baseline - 1e-12);
  }

  SUBCASE("strategy must be finetune") {
    TrainConfig bad = cfg;
    bad.strategy = StrategyKind::distill;
    bad.teacher_path = enc_path;
    CHECK_THROWS_AS(train_teacher_probe(enc_path, ds, bad), ConfigError);
  }

  SUBCASE("deterministic") {
    const TrainResult again = train_teacher_probe(enc_path, ds, cfg);
    CHECK(params_equal(probe.checkpoint, again.checkpoint));
  }

  std::remove(enc_path.c_str());
}

TEST_CASE("train_teacher_probe: separable features reach 100% train accuracy") {
  // noise=0, spread=0: every class collapses to one distinct point, which a
  // linear head separates. The "identity encoder" is a dense stack at work:
  // any full-rank map keeps the points distinct; reaching 100% only needs
  // the probe to fit 4 point-classes.
  GenSpec g;
  g.num_classes = 4;
  g.samples_per_class = 30;
  g.feature_dim = 8;
  g.subclusters = 1;
  g.subclass_spread = 0.0;
  g.noise = 0.0;
  g.seed = 21;
  const Dataset ds = generate(g);

  TrainConfig pre_cfg = quick_config("dense-t", 1);
  const TrainResult pre = train_student(ds, pre_cfg);
  const std::string enc_path = tmp_path("sep_encoder.ckpt");
  save_checkpoint(pre.checkpoint, enc_path);

  TrainConfig cfg = quick_config("dense-t", 30);
  cfg.lr_max = 1e-2;  // a linear head on 4 distinct points converges fast
  cfg.lr_min = 1e-4;
  const TrainResult probe = train_teacher_probe(enc_path, ds, cfg);

  const Model m = model_from_checkpoint(probe.checkpoint);
  CHECK(evaluate(m, ds, Split::train) == 1.0);
  std::remove(enc_path.c_str());
}

TEST_CASE("split helpers: chunking does not change rows") {
  const Dataset ds = small_dataset(15);
  const ModelSpec spec = make_preset("dense-t", ds.sample_shape(), ds.num_classes);
  const Model m = init_truncated_normal(spec, 0.02, 2);

  const Tensor a = split_logits(m, ds, Split::train, 7);
  const Tensor b = split_logits(m, ds, Split::train, 1000);
  CHECK(std::memcmp(a.data(), b.data(),
                    sizeof(double) * static_cast<std::size_t>(a.numel())) == 0);

  const Tensor ea = split_embeddings(m, ds, Split::test, 3);
  const Tensor eb = split_embeddings(m, ds, Split::test, 64);
  CHECK(std::memcmp(ea.data(), eb.data(),
                    sizeof(double) * static_cast<std::size_t>(ea.numel())) == 0);

  // head(embeddings) == logits exactly.
  const Tensor head_logits = m.head_forward(nullptr, ea);
  const Tensor direct = split_logits(m, ds, Split::test, 64);
  CHECK(std::memcmp(head_logits.data(), direct.data(),
                    sizeof(double) * static_cast<std::size_t>(direct.numel())) == 0);
}

TEST_CASE("embedding csv export round trip") {
  const Dataset ds = small_dataset(16);
  const ModelSpec spec = make_preset("dense-t", ds.sample_shape(), ds.num_classes);
  const Model m = init_truncated_normal(spec, 0.02, 5);
  const Tensor emb = split_embeddings(m, ds, Split::val);

  const std::string path = tmp_path("emb.csv");
  export_matrix_csv(emb, path);
  const Tensor back = import_matrix_csv(path);
  REQUIRE(back.shape() == emb.shape());
  CHECK(std::memcmp(back.data(), emb.data(),
                    sizeof(double) * static_cast<std::size_t>(emb.numel())) == 0);
  std::remove(path.c_str());

  CHECK_THROWS_AS(import_matrix_csv(tmp_path("missing.csv")), IoError);
  CHECK_THROWS_AS(export_matrix_csv(Tensor::zeros({3}), path), ShapeError);
}
