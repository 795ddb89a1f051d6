#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crs/curves.hpp"
#include "crs/feature_set.hpp"
#include "crs/nn.hpp"

namespace crs {

/// Image batch with ground-truth labels. Pixel values are already
/// normalized (per-channel standardization for CIFAR-10; raw generator
/// units for synthetic data).
struct LabeledDataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  int class_count = 0;
  std::string split;

  int size() const { return images.defined() ? images.dim(0) : 0; }
};

struct Cifar10 {
  LabeledDataset train;
  LabeledDataset test;
  std::array<double, 3> mean{};    // train-split statistics used for both splits
  std::array<double, 3> stddev{};
};

/// Raw CIFAR-10 batch: one label byte + 3072 channel-planar pixel bytes per
/// record, exactly as stored on disk.
struct Cifar10RawBatch {
  std::vector<uint8_t> labels;
  std::vector<uint8_t> pixels;  // record-major, 3072 bytes per record
};

Cifar10RawBatch read_cifar10_batch(const std::string& path, int expected_records = 10000);
void write_cifar10_batch(const Cifar10RawBatch& batch, const std::string& path);

/// Loads the standard binary batches (data_batch_1..5.bin + test_batch.bin)
/// from `dir`. Pixels are scaled to [0,1] and standardized per channel with
/// statistics computed from the train split.
Cifar10 load_cifar10_binary(const std::string& dir);

/// Class-templated Gaussian images: each class renders a fixed random
/// template (norm separation/sqrt(2), so templates sit ~`separation` apart
/// in pixel space) plus unit per-pixel noise.
LabeledDataset synth_blobs(int classes, int n_per_class, int size, int channels, uint64_t seed,
                           double separation);

/// Stratified head of a dataset: up to max_samples rows, class-balanced,
/// preserving original order within each class. max_samples <= 0 keeps all.
LabeledDataset stratified_subset(const LabeledDataset& ds, int max_samples);

// ---- CRSF feature dump -------------------------------------------------
// magic "CRSF", version u16, tap count u16, then per tap: name length u16 +
// UTF-8 name, rank u8, dims (u32 each), row-major f32 little-endian values;
// trailer: N u32 + labels (u32 each).

void write_feature_dump(const FeatureSet& fs, const std::string& path);
FeatureSet read_feature_dump(const std::string& path);

// ---- CS curve CSV ------------------------------------------------------
// header `layer_index,layer_name,scale,cs`, one row per (tap, scale),
// tap-major order, cs printed with 6 decimals.

void write_cs_csv(const CSCurveSet& curves, const std::string& path);
CSCurveSet read_cs_csv(const std::string& path);

// ---- Checkpoints -------------------------------------------------------
// All parameters plus batchnorm running stats keyed by name; loading
// validates the name set and shapes against the target model.

void checkpoint_save(Model& model, const std::string& path);
void checkpoint_load(Model& model, const std::string& path);

}  // namespace crs
