// SPDX-License-Identifier: Apache-2.0

#include "kd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "kd/rng.hpp"

namespace kd {

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("split: expected train, val or test, got \"" + s + "\"");
}

DataFormat data_format_from_string(const std::string& s) {
  if (s == "packed-binary" || s == "packed") return DataFormat::packed;
  if (s == "tabular-csv" || s == "csv") return DataFormat::csv;
  throw ConfigError("format: expected packed-binary or tabular-csv, got \"" + s + "\"");
}

DataFormat data_format_for_path(const std::string& path) {
  const std::string suffix = ".csv";
  if (path.size() >= suffix.size() &&
      path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return DataFormat::csv;
  }
  return DataFormat::packed;
}

Shape Dataset::sample_shape() const {
  Shape s = features.shape();
  s.erase(s.begin());
  return s;
}

const SplitRange& Dataset::range(Split s) const {
  switch (s) {
    case Split::train: return train_range;
    case Split::val: return val_range;
    case Split::test: return test_range;
  }
  return train_range;
}

std::vector<Index> Dataset::class_histogram() const {
  std::vector<Index> h(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) h[static_cast<std::size_t>(l)]++;
  return h;
}

void Dataset::validate() const {
  if (!features.defined() || features.rank() < 2) {
    throw DataError("dataset: features must be [n x sample shape]");
  }
  const Index n = features.dim(0);
  if (static_cast<Index>(labels.size()) != n) {
    throw DataError("dataset: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(n) + " samples");
  }
  if (num_classes < 2) {
    throw DataError("dataset: need >= 2 classes, have " + std::to_string(num_classes));
  }
  if (train_range.begin != 0 || train_range.end != val_range.begin ||
      val_range.end != test_range.begin || test_range.end != n ||
      train_range.size() < 0 || val_range.size() < 0 || test_range.size() < 0) {
    throw DataError("dataset: splits must tile [0, " + std::to_string(n) +
                    ") as train|val|test");
  }
  std::vector<bool> in_train(static_cast<std::size_t>(num_classes), false);
  for (Index i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l < 0 || l >= num_classes) {
      throw DataError("dataset: label " + std::to_string(l) + " out of range at sample " +
                      std::to_string(i));
    }
    if (i < train_range.end) in_train[static_cast<std::size_t>(l)] = true;
  }
  for (Index c = 0; c < num_classes; ++c) {
    if (!in_train[static_cast<std::size_t>(c)]) {
      throw DataError("dataset: class " + std::to_string(c) + " has no train samples");
    }
  }
}

Tensor split_features(const Dataset& ds, Split s) {
  const SplitRange& r = ds.range(s);
  Shape shape = ds.features.shape();
  shape[0] = r.size();
  if (r.size() == 0) throw DataError("dataset: split '" + std::string(to_string(s)) + "' is empty");
  Tensor out = Tensor::zeros(shape);
  const Index row = shape_numel(ds.sample_shape());
  std::memcpy(out.data(), ds.features.data() + r.begin * row,
              sizeof(double) * static_cast<std::size_t>(r.size() * row));
  return out;
}

std::vector<int> split_labels(const Dataset& ds, Split s) {
  const SplitRange& r = ds.range(s);
  return {ds.labels.begin() + r.begin, ds.labels.begin() + r.end};
}

// ---------------------------------------------------------------------------
// GenSpec
// ---------------------------------------------------------------------------

void GenSpec::validate() const {
  if (num_classes < 2) throw ConfigError("gen spec: num_classes must be >= 2");
  if (samples_per_class < 1) throw ConfigError("gen spec: samples_per_class must be >= 1");
  if (tail_exponent < 0.0) throw ConfigError("gen spec: tail_exponent must be >= 0");
  if ((feature_dim > 0) == (image_side > 0)) {
    throw ConfigError("gen spec: exactly one of feature_dim and image_side must be positive");
  }
  if (subclusters < 1) throw ConfigError("gen spec: subclusters must be >= 1");
  if (subclass_spread < 0.0 || noise < 0.0) {
    throw ConfigError("gen spec: spread and noise must be >= 0");
  }
  if (label_noise < 0.0 || label_noise >= 1.0) {
    throw ConfigError("gen spec: label_noise must be in [0, 1)");
  }
}

nlohmann::json GenSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"samples_per_class", samples_per_class},
          {"tail_exponent", tail_exponent},
          {"feature_dim", feature_dim},
          {"image_side", image_side},
          {"subclusters", subclusters},
          {"subclass_spread", subclass_spread},
          {"noise", noise},
          {"label_noise", label_noise},
          {"seed", seed}};
}

GenSpec GenSpec::from_json(const nlohmann::json& j) {
  static const char* known[] = {"num_classes", "samples_per_class", "tail_exponent",
                                "feature_dim", "image_side", "subclusters",
                                "subclass_spread", "noise", "label_noise", "seed"};
  if (!j.is_object()) throw ConfigError("gen spec: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("gen spec: unknown key \"" + it.key() + "\"");
  }
  GenSpec s;
  try {
    s.num_classes = j.value("num_classes", s.num_classes);
    s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
    s.tail_exponent = j.value("tail_exponent", s.tail_exponent);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.image_side = j.value("image_side", s.image_side);
    if (s.image_side > 0 && !j.contains("feature_dim")) s.feature_dim = 0;
    s.subclusters = j.value("subclusters", s.subclusters);
    s.subclass_spread = j.value("subclass_spread", s.subclass_spread);
    s.noise = j.value("noise", s.noise);
    s.label_noise = j.value("label_noise", s.label_noise);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gen spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> unit_vector(Rng& rng, Index dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

struct Blob {
  double cx, cy, w, amp;
};

}  // namespace

Dataset generate(const GenSpec& spec) {
  spec.validate();
  const Index C = spec.num_classes;
  const Index S = spec.subclusters;
  const bool image = spec.image_side > 0;
  const Index side = spec.image_side;
  const Index dim = image ? side * side : spec.feature_dim;

  std::vector<Index> sizes(static_cast<std::size_t>(C));
  Index total = 0;
  for (Index c = 0; c < C; ++c) {
    const double raw = static_cast<double>(spec.samples_per_class) *
                       std::pow(static_cast<double>(c + 1), -spec.tail_exponent);
    sizes[static_cast<std::size_t>(c)] = static_cast<Index>(std::llround(raw));
    if (sizes[static_cast<std::size_t>(c)] < 1) {
      throw DataError("gen: class " + std::to_string(c) + " would receive 0 samples (" +
                      std::to_string(spec.samples_per_class) + " * rank^-" +
                      std::to_string(spec.tail_exponent) + "); reduce num_classes or the exponent");
    }
    total += sizes[static_cast<std::size_t>(c)];
  }

  Rng rng(spec.seed);

  // Class geometry. Every draw below happens regardless of the spread/noise
  // values, so those dials rescale a fixed layout rather than changing it.
  std::vector<std::vector<double>> centroid(static_cast<std::size_t>(C));
  std::vector<std::vector<std::vector<double>>> mode_dir(static_cast<std::size_t>(C));
  std::vector<std::vector<Blob>> blobs(static_cast<std::size_t>(C));
  std::vector<std::vector<std::vector<std::pair<double, double>>>> jitter(
      static_cast<std::size_t>(C));
  constexpr Index kBlobs = 3;
  for (Index c = 0; c < C; ++c) {
    if (!image) {
      centroid[static_cast<std::size_t>(c)] = unit_vector(rng, dim);
      for (Index m = 0; m < S; ++m) {
        mode_dir[static_cast<std::size_t>(c)].push_back(unit_vector(rng, dim));
      }
    } else {
      for (Index b = 0; b < kBlobs; ++b) {
        Blob bl;
        bl.cx = rng.uniform(0.25 * side, 0.75 * side);
        bl.cy = rng.uniform(0.25 * side, 0.75 * side);
        bl.w = rng.uniform(0.10 * side, 0.22 * side);
        bl.amp = rng.uniform(0.6, 1.0);
        blobs[static_cast<std::size_t>(c)].push_back(bl);
      }
      for (Index m = 0; m < S; ++m) {
        std::vector<std::pair<double, double>> js;
        for (Index b = 0; b < kBlobs; ++b) js.emplace_back(rng.normal(), rng.normal());
        jitter[static_cast<std::size_t>(c)].push_back(std::move(js));
      }
    }
  }

  // Per-class sample buffers plus each sample's (possibly noised) label.
  const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<std::vector<double>> feats(static_cast<std::size_t>(C));
  std::vector<std::vector<int>> labs(static_cast<std::size_t>(C));
  std::vector<Index> train_c(static_cast<std::size_t>(C)), val_c(static_cast<std::size_t>(C)),
      test_c(static_cast<std::size_t>(C));
  for (Index c = 0; c < C; ++c) {
    const Index n = sizes[static_cast<std::size_t>(c)];
    val_c[static_cast<std::size_t>(c)] = n / 10;
    test_c[static_cast<std::size_t>(c)] = n / 10;
    train_c[static_cast<std::size_t>(c)] =
        n - val_c[static_cast<std::size_t>(c)] - test_c[static_cast<std::size_t>(c)];
    auto& f = feats[static_cast<std::size_t>(c)];
    auto& l = labs[static_cast<std::size_t>(c)];
    f.resize(static_cast<std::size_t>(n * dim));
    l.assign(static_cast<std::size_t>(n), static_cast<int>(c));
    for (Index k = 0; k < n; ++k) {
      const Index m = rng.uniform_int(0, S - 1);
      double* row = f.data() + k * dim;
      if (!image) {
        const auto& cen = centroid[static_cast<std::size_t>(c)];
        const auto& md = mode_dir[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)];
        for (Index d = 0; d < dim; ++d) {
          const double g = rng.normal();
          row[d] = round_f32(cen[static_cast<std::size_t>(d)] +
                             spec.subclass_spread * md[static_cast<std::size_t>(d)] +
                             spec.noise * inv_sqrt_dim * g);
        }
      } else {
        const auto& bl = blobs[static_cast<std::size_t>(c)];
        const auto& js = jitter[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)];
        for (Index y = 0; y < side; ++y) {
          for (Index x = 0; x < side; ++x) {
            double v = 0.0;
            for (Index b = 0; b < kBlobs; ++b) {
              const double cx = bl[static_cast<std::size_t>(b)].cx +
                                spec.subclass_spread * js[static_cast<std::size_t>(b)].first;
              const double cy = bl[static_cast<std::size_t>(b)].cy +
                                spec.subclass_spread * js[static_cast<std::size_t>(b)].second;
              const double dx = static_cast<double>(x) - cx;
              const double dy = static_cast<double>(y) - cy;
              const double w2 = bl[static_cast<std::size_t>(b)].w *
                                bl[static_cast<std::size_t>(b)].w;
              v += bl[static_cast<std::size_t>(b)].amp *
                   std::exp(-(dx * dx + dy * dy) / (2.0 * w2));
            }
            const double g = rng.normal();
            row[y * side + x] = round_f32(v + spec.noise * g);
          }
        }
      }
      // Label noise: both draws always happen, the result applies only to
      // train-portion samples, so the feature stream never shifts.
      const double u = rng.uniform();
      const long repl = rng.uniform_int(0, C - 1);
      if (u < spec.label_noise && k < train_c[static_cast<std::size_t>(c)]) {
        l[static_cast<std::size_t>(k)] = static_cast<int>(repl);
      }
    }
  }

  // Assemble [train | val | test], classes in order inside each split.
  Dataset ds;
  ds.num_classes = C;
  Shape shape = image ? Shape{total, 1, side, side} : Shape{total, dim};
  ds.features = Tensor::zeros(shape);
  ds.labels.resize(static_cast<std::size_t>(total));
  Index pos = 0;
  auto emit = [&](Index c, Index from, Index count) {
    std::memcpy(ds.features.data() + pos * dim,
                feats[static_cast<std::size_t>(c)].data() + from * dim,
                sizeof(double) * static_cast<std::size_t>(count * dim));
    for (Index k = 0; k < count; ++k) {
      ds.labels[static_cast<std::size_t>(pos + k)] =
          labs[static_cast<std::size_t>(c)][static_cast<std::size_t>(from + k)];
    }
    pos += count;
  };
  for (Index c = 0; c < C; ++c) emit(c, 0, train_c[static_cast<std::size_t>(c)]);
  ds.train_range = {0, pos};
  for (Index c = 0; c < C; ++c) {
    emit(c, train_c[static_cast<std::size_t>(c)], val_c[static_cast<std::size_t>(c)]);
  }
  ds.val_range = {ds.train_range.end, pos};
  for (Index c = 0; c < C; ++c) {
    emit(c, train_c[static_cast<std::size_t>(c)] + val_c[static_cast<std::size_t>(c)],
         test_c[static_cast<std::size_t>(c)]);
  }
  ds.test_range = {ds.val_range.end, pos};
  ds.validate();
  return ds;
}

Dataset merge_labels(const Dataset& ds, Index group) {
  if (group < 1) throw ConfigError("merge_labels: group must be >= 1");
  Dataset out = ds;
  out.num_classes = (ds.num_classes + group - 1) / group;
  if (out.num_classes < 2) {
    throw ConfigError("merge_labels: group " + std::to_string(group) +
                      " collapses " + std::to_string(ds.num_classes) +
                      " classes below 2");
  }
  for (auto& l : out.labels) l = l / static_cast<int>(group);
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Packed binary format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'F', 'D', '1'};

using binio::put_f32;
using binio::put_u32;
using binio::read_file;
using binio::Reader;
using binio::write_file;

void save_packed(const Dataset& ds, const std::string& path) {
  const Shape sample = ds.sample_shape();
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(ds.size()));
  put_u32(buf, static_cast<std::uint32_t>(ds.num_classes));
  put_u32(buf, static_cast<std::uint32_t>(sample.size()));
  for (Index d : sample) put_u32(buf, static_cast<std::uint32_t>(d));
  for (Index i = 0; i < ds.features.numel(); ++i) {
    put_f32(buf, static_cast<float>(ds.features.values()(i)));
  }
  for (int l : ds.labels) put_u32(buf, static_cast<std::uint32_t>(l));
  for (const SplitRange* r : {&ds.train_range, &ds.val_range, &ds.test_range}) {
    put_u32(buf, static_cast<std::uint32_t>(r->begin));
    put_u32(buf, static_cast<std::uint32_t>(r->end));
  }
  write_file(path, buf, "packed dataset");
}

Dataset load_packed(const std::string& path) {
  const std::string bytes = read_file(path, "packed dataset");
  Reader r(bytes, "packed dataset");
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("packed dataset: bad magic at offset 0 in " + path);
  }
  (void)r.raw(4, "magic");
  Dataset ds;
  const std::uint32_t n = r.u32("sample count");
  ds.num_classes = static_cast<Index>(r.u32("class count"));
  const std::uint32_t rank = r.u32("sample rank");
  if (rank == 0 || rank > 8) {
    throw DataError("packed dataset: implausible sample rank " + std::to_string(rank) +
                    " at byte offset " + std::to_string(r.offset() - 4));
  }
  Shape shape{static_cast<Index>(n)};
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32("sample dims");
    if (d == 0) {
      throw DataError("packed dataset: zero dim at byte offset " +
                      std::to_string(r.offset() - 4));
    }
    shape.push_back(static_cast<Index>(d));
  }
  if (n == 0) throw DataError("packed dataset: empty (0 samples)");
  ds.features = Tensor::zeros(shape);
  for (Index i = 0; i < ds.features.numel(); ++i) {
    ds.features.values()(i) = static_cast<double>(r.f32("feature payload"));
  }
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t l = r.u32("label payload");
    if (l >= static_cast<std::uint32_t>(ds.num_classes)) {
      throw DataError("packed dataset: label " + std::to_string(l) +
                      " out of range for " + std::to_string(ds.num_classes) +
                      " classes at sample " + std::to_string(i) + " (byte offset " +
                      std::to_string(r.offset() - 4) + ")");
    }
    ds.labels[i] = static_cast<int>(l);
  }
  for (SplitRange* sr : {&ds.train_range, &ds.val_range, &ds.test_range}) {
    sr->begin = static_cast<Index>(r.u32("split ranges"));
    sr->end = static_cast<Index>(r.u32("split ranges"));
  }
  if (r.remaining() != 0) {
    throw DataError("packed dataset: " + std::to_string(r.remaining()) +
                    " trailing bytes at offset " + std::to_string(r.offset()));
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// CSV + sidecar format
// ---------------------------------------------------------------------------

std::string sidecar_path(const std::string& csv_path) {
  return csv_path + ".splits.json";
}

void save_csv(const Dataset& ds, const std::string& path) {
  if (ds.sample_shape().size() != 1) {
    throw ConfigError("tabular-csv supports flat feature vectors only; samples are " +
                      shape_str(ds.sample_shape()) + " (use packed-binary)");
  }
  const Index dim = ds.sample_shape()[0];
  std::string buf = "label";
  for (Index d = 0; d < dim; ++d) buf += ",f" + std::to_string(d);
  buf += "\n";
  char num[48];
  for (Index i = 0; i < ds.size(); ++i) {
    buf += std::to_string(ds.labels[static_cast<std::size_t>(i)]);
    for (Index d = 0; d < dim; ++d) {
      // %.9g round-trips any float32-valued double exactly.
      std::snprintf(num, sizeof num, ",%.9g", ds.features.values()(i * dim + d));
      buf += num;
    }
    buf += "\n";
  }
  write_file(path, buf, "csv dataset");

  nlohmann::json side;
  side["num_classes"] = ds.num_classes;
  for (auto [name, r] : {std::pair{"train", &ds.train_range},
                         std::pair{"val", &ds.val_range},
                         std::pair{"test", &ds.test_range}}) {
    std::vector<Index> idx;
    for (Index i = r->begin; i < r->end; ++i) idx.push_back(i);
    side[name] = idx;
  }
  write_file(sidecar_path(path), side.dump(2) + "\n", "csv split sidecar");
}

Dataset load_csv(const std::string& path) {
  const std::string text = read_file(path, "csv dataset");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(sidecar_path(path), "csv split sidecar"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("csv split sidecar: " + sidecar_path(path) + ": " + e.what());
  }
  Index num_classes = 0;
  std::vector<std::vector<Index>> lists(3);
  try {
    num_classes = side.at("num_classes").get<Index>();
    lists[0] = side.at("train").get<std::vector<Index>>();
    lists[1] = side.at("val").get<std::vector<Index>>();
    lists[2] = side.at("test").get<std::vector<Index>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("csv split sidecar: " + sidecar_path(path) + ": " + e.what());
  }

  // Header: label,f0,f1,...
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) {
    throw DataError("csv dataset: line 1: header must start with 'label'");
  }
  Index dim = 0;
  for (char ch : line) {
    if (ch == ',') ++dim;
  }
  if (dim < 1) throw DataError("csv dataset: line 1: no feature columns");

  std::vector<double> feats;
  std::vector<int> labels;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.c_str();
    char* end = nullptr;
    const long label = std::strtol(p, &end, 10);
    if (end == p || *end != ',') {
      throw DataError("csv dataset: line " + std::to_string(line_no) + ": bad label field");
    }
    if (label < 0 || label >= num_classes) {
      throw DataError("csv dataset: line " + std::to_string(line_no) + ": label " +
                      std::to_string(label) + " out of range for " +
                      std::to_string(num_classes) + " classes");
    }
    labels.push_back(static_cast<int>(label));
    p = end;
    for (Index d = 0; d < dim; ++d) {
      if (*p != ',') {
        throw DataError("csv dataset: line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim + 1) + " fields, got " + std::to_string(d + 1));
      }
      ++p;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw DataError("csv dataset: line " + std::to_string(line_no) +
                        ": bad numeric field " + std::to_string(d));
      }
      feats.push_back(round_f32(v));
      p = end;
    }
    if (*p != '\0') {
      throw DataError("csv dataset: line " + std::to_string(line_no) + ": trailing characters");
    }
  }
  const Index n = static_cast<Index>(labels.size());
  if (n == 0) throw DataError("csv dataset: no sample rows");

  // The sidecar lists choose the split membership and the storage order.
  std::vector<Index> order;
  for (const auto& l : lists) order.insert(order.end(), l.begin(), l.end());
  if (static_cast<Index>(order.size()) != n) {
    throw DataError("csv split sidecar: lists cover " + std::to_string(order.size()) +
                    " indices for " + std::to_string(n) + " rows");
  }
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (Index i : order) {
    if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)]) {
      throw DataError("csv split sidecar: index " + std::to_string(i) +
                      " missing, duplicated or out of range");
    }
    seen[static_cast<std::size_t>(i)] = true;
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.features = Tensor::zeros({n, dim});
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index pos = 0; pos < n; ++pos) {
    const Index src = order[static_cast<std::size_t>(pos)];
    std::memcpy(ds.features.data() + pos * dim, feats.data() + src * dim,
                sizeof(double) * static_cast<std::size_t>(dim));
    ds.labels[static_cast<std::size_t>(pos)] = labels[static_cast<std::size_t>(src)];
  }
  const Index t = static_cast<Index>(lists[0].size());
  const Index v = static_cast<Index>(lists[1].size());
  ds.train_range = {0, t};
  ds.val_range = {t, t + v};
  ds.test_range = {t + v, n};
  ds.validate();
  return ds;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path, DataFormat format) {
  ds.validate();
  if (format == DataFormat::packed) {
    save_packed(ds, path);
  } else {
    save_csv(ds, path);
  }
}

Dataset load_dataset(const std::string& path, DataFormat format) {
  return format == DataFormat::packed ? load_packed(path) : load_csv(path);
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<Batch> batches(const Dataset& ds, Split split, Index batch_size,
                           std::uint64_t shuffle_seed, long epoch) {
  if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
  const SplitRange& r = ds.range(split);
  const Index n = r.size();
  if (n == 0) {
    throw DataError("batches: split '" + std::string(to_string(split)) + "' is empty");
  }
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = r.begin + i;
  Rng rng(shuffle_seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch) +
                          0x632be59bd9b4e019ULL));
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.uniform_int(0, i));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }

  const Index row = shape_numel(ds.sample_shape());
  std::vector<Batch> out;
  for (Index at = 0; at < n; at += batch_size) {
    const Index count = std::min(batch_size, n - at);
    Shape shape = ds.features.shape();
    shape[0] = count;
    Batch b;
    b.features = Tensor::zeros(shape);
    b.labels.resize(static_cast<std::size_t>(count));
    b.indices.resize(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
      const Index src = perm[static_cast<std::size_t>(at + k)];
      std::memcpy(b.features.data() + k * row, ds.features.data() + src * row,
                  sizeof(double) * static_cast<std::size_t>(row));
      b.labels[static_cast<std::size_t>(k)] = ds.labels[static_cast<std::size_t>(src)];
      b.indices[static_cast<std::size_t>(k)] = src;
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace kd
