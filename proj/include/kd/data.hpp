// SPDX-License-Identifier: Apache-2.0
//
// Dataset provisioning: a seeded synthetic generator (Gaussian-mixture
// classes with subcluster structure, optional long-tail skew, flat-vector or
// blob-image samples) plus two on-disk formats — a packed binary and a CSV
// with a JSON split sidecar. Feature values are float32-valued doubles
// everywhere, so generate -> save -> load round-trips bitwise.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kd/tensor.hpp"

namespace kd {

enum class Split { train, val, test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct SplitRange {
  Index begin = 0;
  Index end = 0;  // half-open
  Index size() const { return end - begin; }
};

struct Dataset {
  Tensor features;          // [N x sample shape]
  std::vector<int> labels;  // N entries in [0, num_classes)
  SplitRange train_range, val_range, test_range;  // contiguous, in this order
  Index num_classes = 0;

  Index size() const { return features.defined() ? features.dim(0) : 0; }
  Shape sample_shape() const;
  const SplitRange& range(Split s) const;
  std::vector<Index> class_histogram() const;

  /// Checks the structural invariants: ranges tile [0, N) in order, labels
  /// in range, every class present in train. DataError on violation.
  void validate() const;
};

/// Copies the rows of one split into a fresh tensor + label vector.
Tensor split_features(const Dataset& ds, Split s);
std::vector<int> split_labels(const Dataset& ds, Split s);

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct GenSpec {
  Index num_classes = 10;
  /// Size of the largest class; with tail_exponent e > 0, class at rank r
  /// (1-based, rank 1 largest) gets round(samples_per_class * r^-e) samples.
  Index samples_per_class = 100;
  double tail_exponent = 0.0;
  /// Exactly one of these is positive: flat vectors of feature_dim, or
  /// single-channel square images of side image_side.
  Index feature_dim = 32;
  Index image_side = 0;
  Index subclusters = 3;        // modes per class
  double subclass_spread = 0.0; // distance of mode centers from the class centroid
  double noise = 0.0;           // per-sample displacement scale
  double label_noise = 0.0;     // fraction of train labels resampled uniformly
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
  nlohmann::json to_json() const;
  static GenSpec from_json(const nlohmann::json& j);  // rejects unknown keys
};

/// Deterministic in spec (including seed). Samples are laid out as
/// [train | val | test], stratified per class ~80/10/10 (floor(n/10) each for
/// val and test). All random draws are made unconditionally and scaled by
/// spread/noise afterward, so changing only those dials rescales a fixed
/// geometry instead of resampling it.
Dataset generate(const GenSpec& spec);

/// Coarse-label variant: label c becomes c / group (integer division),
/// num_classes becomes ceil(C / group). Features and splits are shared.
Dataset merge_labels(const Dataset& ds, Index group);

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

enum class DataFormat { packed, csv };
DataFormat data_format_from_string(const std::string& s);
/// Format inferred from the file name: ".csv" means csv, anything else packed.
DataFormat data_format_for_path(const std::string& path);

void save_dataset(const Dataset& ds, const std::string& path, DataFormat format);
Dataset load_dataset(const std::string& path, DataFormat format);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  Tensor features;
  std::vector<int> labels;
  std::vector<Index> indices;  // positions in the full dataset, for caches
};

/// One epoch's batches over a split: a Fisher-Yates permutation seeded by
/// (shuffle_seed, epoch), cut into batch_size pieces (last may be short).
/// Every sample appears exactly once.
std::vector<Batch> batches(const Dataset& ds, Split split, Index batch_size,
                           std::uint64_t shuffle_seed, long epoch);

}  // namespace kd
