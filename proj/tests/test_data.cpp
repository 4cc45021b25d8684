// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "kd/data.hpp"
#include "oracles.hpp"

using namespace kd;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.numel())) == 0;
}

// Nearest-class-mean classifier: fit per-class means on train, score on test.
double centroid_accuracy(const Dataset& ds) {
  const Index dim = shape_numel(ds.sample_shape());
  std::vector<std::vector<double>> mean(static_cast<std::size_t>(ds.num_classes),
                                        std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  std::vector<Index> count(static_cast<std::size_t>(ds.num_classes), 0);
  for (Index i = ds.train_range.begin; i < ds.train_range.end; ++i) {
    const int c = ds.labels[static_cast<std::size_t>(i)];
    count[static_cast<std::size_t>(c)]++;
    for (Index d = 0; d < dim; ++d) {
      mean[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] +=
          ds.features.data()[i * dim + d];
    }
  }
  for (Index c = 0; c < ds.num_classes; ++c) {
    for (auto& v : mean[static_cast<std::size_t>(c)]) {
      v /= static_cast<double>(count[static_cast<std::size_t>(c)]);
    }
  }
  Index hits = 0;
  for (Index i = ds.test_range.begin; i < ds.test_range.end; ++i) {
    double best = 1e300;
    int arg = -1;
    for (Index c = 0; c < ds.num_classes; ++c) {
      double d2 = 0.0;
      for (Index d = 0; d < dim; ++d) {
        const double diff = ds.features.data()[i * dim + d] -
                            mean[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        arg = static_cast<int>(c);
      }
    }
    if (arg == ds.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.test_range.size());
}

std::string tmp_path(const std::string& name) {
  return std::string("/tmp/kd_data_test_") + name;
}

}  // namespace

TEST_CASE("generate: balanced classes, determinism, stratified splits") {
  GenSpec spec;
  spec.num_classes = 10;
  spec.samples_per_class = 100;
  spec.feature_dim = 32;
  spec.noise = 0.3;
  spec.subclass_spread = 0.4;
  spec.seed = 7;
  const Dataset ds = generate(spec);
  ds.validate();

  CHECK(ds.size() == 1000);
  CHECK(ds.sample_shape() == Shape{32});
  const auto hist = ds.class_histogram();
  for (Index c = 0; c < 10; ++c) CHECK(hist[static_cast<std::size_t>(c)] == 100);

  // 80/10/10 per class.
  CHECK(ds.train_range.size() == 800);
  CHECK(ds.val_range.size() == 100);
  CHECK(ds.test_range.size() == 100);
  for (Split s : {Split::train, Split::val, Split::test}) {
    std::map<int, int> per_class;
    for (int l : split_labels(ds, s)) per_class[l]++;
    // Label noise is off, so each split is exactly stratified.
    for (auto [c, n] : per_class) {
      (void)c;
      CHECK(n == (s == Split::train ? 80 : 10));
    }
    CHECK(per_class.size() == 10);
  }

  const Dataset again = generate(spec);
  CHECK(bitwise_equal(ds.features, again.features));
  CHECK(ds.labels == again.labels);

  GenSpec other = spec;
  other.seed = 8;
  const Dataset diff = generate(other);
  CHECK_FALSE(bitwise_equal(ds.features, diff.features));

  // Features are float32-valued doubles.
  for (Index i = 0; i < ds.features.numel(); ++i) {
    const double v = ds.features.values()(i);
    CHECK(v == static_cast<double>(static_cast<float>(v)));
  }
}

TEST_CASE("generate: long-tail sizes follow the power law") {
  GenSpec spec;
  spec.num_classes = 8;
  spec.samples_per_class = 200;
  spec.tail_exponent = 1.0;
  spec.feature_dim = 4;
  spec.seed = 1;
  const Dataset ds = generate(spec);
  const auto hist = ds.class_histogram();
  for (Index c = 0; c < 8; ++c) {
    const long expect = std::llround(200.0 * std::pow(static_cast<double>(c + 1), -1.0));
    CHECK(hist[static_cast<std::size_t>(c)] == expect);
  }
  for (Index c = 1; c < 8; ++c) {
    CHECK(hist[static_cast<std::size_t>(c)] <= hist[static_cast<std::size_t>(c - 1)]);
  }

  SUBCASE("a tail too steep to give every class a sample is rejected") {
    GenSpec bad = spec;
    bad.num_classes = 50;
    bad.samples_per_class = 5;
    bad.tail_exponent = 2.0;
    CHECK_THROWS_AS(generate(bad), DataError);
  }
}

TEST_CASE("generate: zero spread and noise collapse classes onto distinct centroids") {
  for (bool image : {false, true}) {
    GenSpec spec;
    spec.num_classes = 6;
    spec.samples_per_class = 30;
    spec.subclusters = 3;
    spec.subclass_spread = 0.0;
    spec.noise = 0.0;
    spec.seed = 11;
    if (image) {
      spec.feature_dim = 0;
      spec.image_side = 8;
    } else {
      spec.feature_dim = 16;
    }
    const Dataset ds = generate(spec);
    if (image) CHECK(ds.sample_shape() == Shape{1, 8, 8});
    CHECK(centroid_accuracy(ds) == 1.0);

    // All samples of one class are literally identical.
    const Index dim = shape_numel(ds.sample_shape());
    std::map<int, Index> first;
    for (Index i = 0; i < ds.size(); ++i) {
      const int c = ds.labels[static_cast<std::size_t>(i)];
      if (!first.count(c)) {
        first[c] = i;
      } else {
        CHECK(std::memcmp(ds.features.data() + i * dim, ds.features.data() + first[c] * dim,
                          sizeof(double) * static_cast<std::size_t>(dim)) == 0);
      }
    }
  }
}

TEST_CASE("generate: noise dial degrades separability monotonically") {
  const double levels[] = {0.2, 0.8, 2.4};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double prev = 2.0;
    for (double noise : levels) {
      GenSpec spec;
      spec.num_classes = 10;
      spec.samples_per_class = 60;
      spec.feature_dim = 16;
      spec.noise = noise;
      spec.subclass_spread = 0.2;
      spec.seed = seed;
      const double acc = centroid_accuracy(generate(spec));
      CHECK(acc <= prev + 1e-12);
      prev = acc;
    }
    CHECK(prev < 1.0);  // the noisiest setting is genuinely hard
  }
}

TEST_CASE("generate: noise dial rescales a fixed geometry instead of resampling it") {
  GenSpec a;
  a.num_classes = 4;
  a.samples_per_class = 20;
  a.feature_dim = 8;
  a.noise = 0.0;
  a.subclass_spread = 0.5;
  a.seed = 3;
  GenSpec b = a;
  b.noise = 1.0;
  const Dataset da = generate(a);
  const Dataset db = generate(b);
  // Same labels, and the noisy features differ from the clean ones by the
  // same per-sample displacement field whichever dial value is used: the
  // clean dataset is the noise->0 limit of the noisy one.
  CHECK(da.labels == db.labels);
  GenSpec c = a;
  c.noise = 2.0;
  const Dataset dc = generate(c);
  for (Index i = 0; i < da.features.numel(); ++i) {
    const double g1 = db.features.values()(i) - da.features.values()(i);
    const double g2 = dc.features.values()(i) - da.features.values()(i);
    CHECK(g2 == doctest::Approx(2.0 * g1).epsilon(1e-4));
  }
}

TEST_CASE("generate: label noise perturbs train labels only, features untouched") {
  GenSpec clean;
  clean.num_classes = 10;
  clean.samples_per_class = 100;
  clean.feature_dim = 8;
  clean.noise = 0.1;
  clean.seed = 5;
  GenSpec noisy = clean;
  noisy.label_noise = 0.3;
  const Dataset dc = generate(clean);
  const Dataset dn = generate(noisy);

  CHECK(bitwise_equal(dc.features, dn.features));
  Index flipped = 0;
  for (Index i = 0; i < dc.size(); ++i) {
    if (dc.labels[static_cast<std::size_t>(i)] != dn.labels[static_cast<std::size_t>(i)]) {
      ++flipped;
      CHECK(i < dc.train_range.end);  // never in val/test
    }
  }
  // 30% of 800 train labels are redrawn uniformly over 10 classes, so about
  // 27% actually change. Allow a generous band.
  CHECK(flipped > 120);
  CHECK(flipped < 330);
}

TEST_CASE("merge_labels: integer-division grouping") {
  GenSpec spec;
  spec.num_classes = 10;
  spec.samples_per_class = 50;
  spec.feature_dim = 4;
  spec.seed = 2;
  const Dataset ds = generate(spec);
  const Dataset merged = merge_labels(ds, 3);
  CHECK(merged.num_classes == 4);  // ceil(10 / 3)
  for (Index i = 0; i < ds.size(); ++i) {
    CHECK(merged.labels[static_cast<std::size_t>(i)] ==
          ds.labels[static_cast<std::size_t>(i)] / 3);
  }
  CHECK(bitwise_equal(merged.features, ds.features));
  CHECK(merged.train_range.end == ds.train_range.end);

  CHECK_THROWS_AS(merge_labels(ds, 0), ConfigError);
  CHECK_THROWS_AS(merge_labels(ds, 10), ConfigError);  // would leave 1 class
}

TEST_CASE("packed format: bitwise round trip") {
  for (bool image : {false, true}) {
    GenSpec spec;
    spec.num_classes = 5;
    spec.samples_per_class = 40;
    spec.noise = 0.5;
    spec.subclass_spread = 0.3;
    spec.seed = 13;
    if (image) {
      spec.feature_dim = 0;
      spec.image_side = 6;
    }
    const Dataset ds = generate(spec);
    const std::string path = tmp_path(image ? "rt_img.bin" : "rt_flat.bin");
    save_dataset(ds, path, DataFormat::packed);
    const Dataset back = load_dataset(path, DataFormat::packed);
    CHECK(bitwise_equal(ds.features, back.features));
    CHECK(ds.labels == back.labels);
    CHECK(ds.num_classes == back.num_classes);
    CHECK(ds.train_range.begin == back.train_range.begin);
    CHECK(ds.train_range.end == back.train_range.end);
    CHECK(ds.val_range.end == back.val_range.end);
    CHECK(ds.test_range.end == back.test_range.end);
    std::remove(path.c_str());
  }
}

TEST_CASE("packed format: corruption is reported with byte offsets") {
  GenSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 10;
  spec.feature_dim = 4;
  spec.seed = 1;
  const Dataset ds = generate(spec);
  const std::string path = tmp_path("corrupt.bin");
  save_dataset(ds, path, DataFormat::packed);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  SUBCASE("bad magic") {
    std::string evil = bytes;
    evil[0] = 'X';
    std::ofstream(path, std::ios::binary) << evil;
    try {
      load_dataset(path, DataFormat::packed);
      CHECK(false);
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
  }
  SUBCASE("truncation") {
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    try {
      load_dataset(path, DataFormat::packed);
      CHECK(false);
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("truncated at byte offset") != std::string::npos);
    }
  }
  SUBCASE("label out of range") {
    // Patch the first label word to 0xFFFF. Layout: magic(4) + n,classes,rank(12)
    // + dims(4) + floats(n*4*4).
    std::string evil = bytes;
    const std::size_t label_at = 4 + 12 + 4 + static_cast<std::size_t>(ds.size()) * 4 * 4;
    evil[label_at] = '\xff';
    evil[label_at + 1] = '\xff';
    std::ofstream(path, std::ios::binary) << evil;
    try {
      load_dataset(path, DataFormat::packed);
      CHECK(false);
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("label") != std::string::npos);
      CHECK(std::string(e.what()).find("out of range") != std::string::npos);
    }
  }
  SUBCASE("trailing garbage") {
    std::ofstream(path, std::ios::binary) << bytes + "junk";
    CHECK_THROWS_AS(load_dataset(path, DataFormat::packed), DataError);
  }
  SUBCASE("missing file is an io error") {
    CHECK_THROWS_AS(load_dataset(tmp_path("no_such_file.bin"), DataFormat::packed), IoError);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv format: round trip and validation") {
  GenSpec spec;
  spec.num_classes = 4;
  spec.samples_per_class = 25;
  spec.feature_dim = 6;
  spec.noise = 0.7;
  spec.seed = 21;
  const Dataset ds = generate(spec);
  const std::string path = tmp_path("rt.csv");
  save_dataset(ds, path, DataFormat::csv);
  const Dataset back = load_dataset(path, DataFormat::csv);
  CHECK(bitwise_equal(ds.features, back.features));
  CHECK(ds.labels == back.labels);
  CHECK(back.train_range.end == ds.train_range.end);
  CHECK(back.val_range.end == ds.val_range.end);

  SUBCASE("image datasets are refused") {
    GenSpec img = spec;
    img.feature_dim = 0;
    img.image_side = 4;
    CHECK_THROWS_AS(save_dataset(generate(img), path, DataFormat::csv), ConfigError);
  }

  SUBCASE("sidecar index lists may reorder rows") {
    // Reverse the train list in the sidecar; the loader must follow it.
    nlohmann::json side;
    {
      std::ifstream f(path + ".splits.json");
      f >> side;
    }
    auto train = side["train"].get<std::vector<Index>>();
    std::reverse(train.begin(), train.end());
    side["train"] = train;
    std::ofstream(path + ".splits.json") << side.dump();
    const Dataset re = load_dataset(path, DataFormat::csv);
    CHECK(re.labels[0] == ds.labels[static_cast<std::size_t>(ds.train_range.end - 1)]);
    CHECK(re.labels[static_cast<std::size_t>(re.val_range.begin)] ==
          ds.labels[static_cast<std::size_t>(ds.val_range.begin)]);
    re.validate();
  }

  SUBCASE("bad rows are named by line") {
    const std::string bad = tmp_path("bad.csv");
    std::ofstream(bad) << "label,f0,f1\n0,1.0,2.0\n9,1.0,2.0\n";
    std::ofstream(bad + ".splits.json")
        << R"({"num_classes": 2, "train": [0, 1], "val": [], "test": []})";
    try {
      load_dataset(bad, DataFormat::csv);
      CHECK(false);
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
      CHECK(std::string(e.what()).find("label 9") != std::string::npos);
    }
    std::ofstream(bad) << "label,f0,f1\n0,1.0\n";
    CHECK_THROWS_AS(load_dataset(bad, DataFormat::csv), DataError);
    std::ofstream(bad) << "label,f0,f1\n0,1.0,oops\n";
    CHECK_THROWS_AS(load_dataset(bad, DataFormat::csv), DataError);
    std::remove(bad.c_str());
    std::remove((bad + ".splits.json").c_str());
  }

  SUBCASE("sidecar must partition the rows") {
    std::ofstream(path + ".splits.json")
        << R"({"num_classes": 4, "train": [0], "val": [], "test": []})";
    CHECK_THROWS_AS(load_dataset(path, DataFormat::csv), DataError);
  }

  std::remove(path.c_str());
  std::remove((path + ".splits.json").c_str());
}

TEST_CASE("batches: permutation epochs") {
  GenSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 20;  // train 48, val 6, test 6
  spec.feature_dim = 5;
  spec.seed = 17;
  const Dataset ds = generate(spec);

  const auto ep0 = batches(ds, Split::train, 10, 99, 0);
  CHECK(ep0.size() == 5);  // 10+10+10+10+8
  CHECK(ep0.back().features.dim(0) == 8);

  // Each sample exactly once, and features really are the indexed rows.
  std::set<Index> seen;
  const Index dim = shape_numel(ds.sample_shape());
  for (const auto& b : ep0) {
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      const Index src = b.indices[k];
      CHECK(seen.insert(src).second);
      CHECK(src >= ds.train_range.begin);
      CHECK(src < ds.train_range.end);
      CHECK(b.labels[k] == ds.labels[static_cast<std::size_t>(src)]);
      CHECK(std::memcmp(b.features.data() + static_cast<Index>(k) * dim,
                        ds.features.data() + src * dim,
                        sizeof(double) * static_cast<std::size_t>(dim)) == 0);
    }
  }
  CHECK(static_cast<Index>(seen.size()) == ds.train_range.size());

  const auto same = batches(ds, Split::train, 10, 99, 0);
  const auto next = batches(ds, Split::train, 10, 99, 1);
  CHECK(ep0[0].indices == same[0].indices);
  bool all_equal = true;
  for (std::size_t b = 0; b < ep0.size(); ++b) all_equal = all_equal && ep0[b].indices == next[b].indices;
  CHECK_FALSE(all_equal);

  SUBCASE("full-split batch") {
    const auto one = batches(ds, Split::test, 1000, 0, 0);
    CHECK(one.size() == 1);
    CHECK(one[0].features.dim(0) == ds.test_range.size());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(batches(ds, Split::train, 0, 0, 0), ConfigError);
    Dataset no_val = ds;
    no_val.val_range = {ds.train_range.end, ds.train_range.end};
    no_val.test_range = {ds.train_range.end, ds.size()};
    CHECK_THROWS_AS(batches(no_val, Split::val, 8, 0, 0), DataError);
  }
}

TEST_CASE("gen spec json round trip rejects unknown keys") {
  GenSpec spec;
  spec.num_classes = 7;
  spec.samples_per_class = 12;
  spec.tail_exponent = 0.5;
  spec.feature_dim = 0;
  spec.image_side = 9;
  spec.subclusters = 2;
  spec.subclass_spread = 0.25;
  spec.noise = 1.5;
  spec.label_noise = 0.1;
  spec.seed = 42;
  const GenSpec back = GenSpec::from_json(spec.to_json());
  CHECK(back.num_classes == spec.num_classes);
  CHECK(back.samples_per_class == spec.samples_per_class);
  CHECK(back.tail_exponent == spec.tail_exponent);
  CHECK(back.image_side == spec.image_side);
  CHECK(back.feature_dim == 0);
  CHECK(back.subclusters == spec.subclusters);
  CHECK(back.subclass_spread == spec.subclass_spread);
  CHECK(back.noise == spec.noise);
  CHECK(back.label_noise == spec.label_noise);
  CHECK(back.seed == spec.seed);

  CHECK_THROWS_AS(GenSpec::from_json({{"num_classes", 5}, {"typo_key", 1}}), ConfigError);
  CHECK_THROWS_AS(GenSpec::from_json(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(GenSpec::from_json({{"num_classes", "five"}}), ConfigError);

  SUBCASE("partial objects inherit defaults") {
    const GenSpec d = GenSpec::from_json({{"num_classes", 3}, {"seed", 9}});
    CHECK(d.num_classes == 3);
    CHECK(d.samples_per_class == 100);
    CHECK(d.feature_dim == 32);
    CHECK(d.seed == 9);
  }
}
