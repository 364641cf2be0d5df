#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "modnet/tensor.hpp"

namespace modnet {

/// Images in [0,1] with class labels. Immutable after load; safe for
/// concurrent reads.
struct LabeledDataset {
  std::vector<Tensor> images;  // (C,H,W)
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return images.size(); }
  void validate() const;  // throws DataError on broken invariants
};

/// Reads an IDX image/label file pair (the MNIST container format:
/// big-endian dims, magic 0x00000803 for images and 0x00000801 for
/// labels). Pixels are scaled to [0,1]. num_classes = max label + 1.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Inverse of load_idx. Pixels are clamped to [0,1] and quantized to one
/// byte, so load_idx(save_idx(ds)) is byte-exact and idempotent.
void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path);

/// Exactly n examples per class, drawn without replacement by seed.
LabeledDataset subsample_per_class(const LabeledDataset& ds, int n, std::uint64_t seed);

/// First n_train examples of each class (scan order) vs the rest.
std::pair<LabeledDataset, LabeledDataset> split_per_class(const LabeledDataset& ds, int n_train);

/// Deterministic core of the augmentation: translate by (dx,dy) pixels and
/// scale about the image center, bilinear resample, zero fill, clip to
/// [0,1]. Output shape equals input shape.
Tensor apply_shift_zoom(const Tensor& img, double dx, double dy, double scale);

/// Random shift up to max_frac of each spatial dim and scale in
/// [1-max_frac, 1+max_frac], drawn independently per call. max_frac = 0
/// returns the input untouched.
Tensor augment_shift_zoom(const Tensor& img, double max_frac, std::mt19937_64& rng);
Tensor augment_shift_zoom(const Tensor& img, double max_frac, std::uint64_t seed);

/// Class-balanced batches; consuming the schedule yields each batch
/// `repeats` consecutive times before the next batch starts.
struct BatchSchedule {
  std::vector<std::vector<int>> batches;  // example indices, per_class of each class
  int repeats = 1;
};

/// Splits the dataset into batches of per_class x num_classes examples,
/// exactly per_class from each class, every example in exactly one batch.
/// All classes must hold the same example count, divisible by per_class.
BatchSchedule small_data_schedule(const LabeledDataset& ds, int per_class, int repeats,
                                  std::uint64_t seed);

/// Seeded synthetic transfer pair. Classes are combinations of motifs from
/// one shared oriented-bar dictionary placed at class-specific anchors, so
/// motif detectors learned on the source carry to the target. Target
/// classes are held-out combinations whose motifs are rotated and
/// intensity-shifted by `shift` in [0,1]. The `noise` dial buys both pixel
/// noise and per-example positional jitter of the motifs: at low noise a
/// nearest-prototype classifier solves the task, at higher settings only
/// translation-tolerant features stay predictive. Examples come out in
/// class-major order.
struct SyntheticTask {
  LabeledDataset source, target;
  std::vector<Tensor> source_protos, target_protos;  // canonical renderings, for oracle bounds
};

SyntheticTask gen_synthetic_transfer(std::uint64_t seed, int k_src, int k_tgt, int n_per_class,
                                     double shift, double noise = 0.12, int image_size = 12);

}  // namespace modnet
