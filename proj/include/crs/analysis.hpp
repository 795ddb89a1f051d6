#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "crs/curves.hpp"
#include "crs/data_io.hpp"
#include "crs/feature_set.hpp"
#include "crs/nn.hpp"

namespace crs {

/// Directed exact M-nearest-neighbour graph. Rows are sorted by
/// (distance, index) ascending; self-edges are excluded.
struct KnnGraph {
  std::vector<std::vector<int>> neighbor_indices;
  std::vector<std::vector<double>> neighbor_distances;
  Metric metric = Metric::euclidean;
  int neighbors = 0;

  int size() const { return static_cast<int>(neighbor_indices.size()); }
};

/// The five-scale default: identity, 2x, 4x, 8x and global pooling.
std::vector<Scale> default_scales();

/// Spatial condensation before the kNN: rank-4 maps are average-pooled at
/// the given scale (clamped to the map size; global pools to 1x1); rank-2
/// features pass through unchanged at every scale.
Tensor scale_features(const Tensor& features, Scale scale);

/// Exact brute-force kNN over per-sample flattened features (channel-major
/// row order). Ties break toward the smaller sample index. Under the cosine
/// metric a zero-norm vector is at distance 1 from everything.
KnnGraph build_knn(const Tensor& features, int neighbors, Metric metric);

/// Fraction of directed kNN edges whose endpoints share a class label.
double class_similarity(const KnnGraph& graph, const std::vector<int>& labels);

/// Pearson correlation of two equal-length CS curves; empty for a
/// zero-variance (constant) curve.
std::optional<double> curve_correlation(const std::vector<double>& a,
                                        const std::vector<double>& b);

/// Eval-mode tapped forward over a stratified sample of the dataset
/// (max_samples <= 0 keeps everything), batched.
FeatureSet capture_features(Model& model, const LabeledDataset& dataset, int max_samples,
                            int batch_size = 256);

/// The CS table for already-captured features: one value per (tap, scale).
CSCurveSet classrepsim_features(const FeatureSet& features, const std::vector<Scale>& scales,
                                int neighbors, Metric metric);

/// Full pipeline: capture features from the model, then condense / graph /
/// score every (tap, scale) cell.
CSCurveSet classrepsim(Model& model, const LabeledDataset& dataset,
                       const std::vector<Scale>& scales, int neighbors, Metric metric,
                       int max_samples);

/// Max-CS window selection: for each stage, the scale with the highest mean
/// CS over that stage's taps (ties go to the smaller window).
std::vector<Scale> peak_scale(const CSCurveSet& curves,
                              const std::vector<std::pair<int, int>>& stage_tap_ranges);

/// Two 2-D unit-variance Gaussian clusters whose center separation shrinks
/// from 10 sigma (t=0) to 3 sigma (t=1); at t=1 the pipeline's CS lands
/// near 0.9. Returns [2 * n_per_class, 2] features plus labels.
std::pair<Tensor, std::vector<int>> toy_transition_dataset(double t, int n_per_class,
                                                           uint64_t seed);

}  // namespace crs
