#include "crs/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace crs {

std::vector<Scale> default_scales() {
  return {Scale::of(1), Scale::of(2), Scale::of(4), Scale::of(8), Scale::global_scale()};
}

Tensor scale_features(const Tensor& features, Scale scale) {
  if (features.rank() == 2) return features;
  if (features.rank() != 4)
    throw ShapeError(strf("scale_features expects rank 2 or 4, got %s",
                          shape_str(features.shape()).c_str()));
  NoGradGuard ng;
  if (scale.global) return global_avg_pool(features);
  return avg_pool2d(features, scale.window);
}

KnnGraph build_knn(const Tensor& features, int neighbors, Metric metric) {
  if (features.rank() != 2 && features.rank() != 4)
    throw ShapeError("build_knn expects rank-2 or rank-4 features");
  const int n = features.dim(0);
  const long dim = features.numel() / n;
  if (neighbors < 1) throw ValueError("build_knn: M must be >= 1");
  if (neighbors >= n)
    throw ValueError(strf("build_knn: M=%d requires more than %d samples", neighbors, n));

  const float* x = features.data();
  std::vector<double> norms;
  if (metric == Metric::cosine) {
    norms.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const float* a = x + static_cast<size_t>(i) * dim;
      double s = 0.0;
      for (long f = 0; f < dim; ++f) s += static_cast<double>(a[f]) * a[f];
      norms[static_cast<size_t>(i)] = std::sqrt(s);
    }
  }

  auto distance = [&](int i, int j) {
    const float* a = x + static_cast<size_t>(i) * dim;
    const float* b = x + static_cast<size_t>(j) * dim;
    if (metric == Metric::euclidean) {
      double s = 0.0;
      for (long f = 0; f < dim; ++f) {
        const double d = static_cast<double>(a[f]) - static_cast<double>(b[f]);
        s += d * d;
      }
      return std::sqrt(s);
    }
    const double na = norms[static_cast<size_t>(i)], nb = norms[static_cast<size_t>(j)];
    if (na == 0.0 || nb == 0.0) return 1.0;
    double dot = 0.0;
    for (long f = 0; f < dim; ++f) dot += static_cast<double>(a[f]) * b[f];
    return 1.0 - dot / (na * nb);
  };

  KnnGraph g;
  g.metric = metric;
  g.neighbors = neighbors;
  g.neighbor_indices.assign(static_cast<size_t>(n), {});
  g.neighbor_distances.assign(static_cast<size_t>(n), {});

  std::vector<std::pair<double, int>> row(static_cast<size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    size_t k = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      row[k++] = {distance(i, j), j};
    }
    std::partial_sort(row.begin(), row.begin() + neighbors, row.end());
    auto& idx = g.neighbor_indices[static_cast<size_t>(i)];
    auto& dst = g.neighbor_distances[static_cast<size_t>(i)];
    idx.resize(static_cast<size_t>(neighbors));
    dst.resize(static_cast<size_t>(neighbors));
    for (int m = 0; m < neighbors; ++m) {
      dst[static_cast<size_t>(m)] = row[static_cast<size_t>(m)].first;
      idx[static_cast<size_t>(m)] = row[static_cast<size_t>(m)].second;
    }
  }
  return g;
}

double class_similarity(const KnnGraph& graph, const std::vector<int>& labels) {
  const int n = graph.size();
  if (static_cast<int>(labels.size()) != n)
    throw ValueError(strf("class_similarity: %zu labels for %d samples", labels.size(), n));
  long matches = 0;
  long edges = 0;
  for (int i = 0; i < n; ++i) {
    for (int j : graph.neighbor_indices[static_cast<size_t>(i)]) {
      matches += labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)] ? 1 : 0;
      ++edges;
    }
  }
  return edges == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(edges);
}

std::optional<double> curve_correlation(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw ValueError("curve_correlation: curves must have equal nonzero length");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;  // constant curve: undefined
  return sab / std::sqrt(saa * sbb);
}

FeatureSet capture_features(Model& model, const LabeledDataset& dataset, int max_samples,
                            int batch_size) {
  if (dataset.size() == 0) throw ValueError("capture_features: empty dataset");
  NoGradGuard ng;
  const bool was_training = model.training;
  model.set_training(false);
  LabeledDataset subset = stratified_subset(dataset, max_samples);
  const int n = subset.size();
  const Shape& is = subset.images.shape();
  const long row = static_cast<long>(is[1]) * is[2] * is[3];

  FeatureSet fs;
  fs.labels = subset.labels;
  for (int start = 0; start < n; start += batch_size) {
    const int cur = std::min(batch_size, n - start);
    Tensor batch({cur, is[1], is[2], is[3]});
    std::memcpy(batch.data(), subset.images.data() + static_cast<long>(start) * row,
                static_cast<size_t>(cur) * static_cast<size_t>(row) * sizeof(float));
    auto [logits, taps] = model.forward_with_taps(batch);
    (void)logits;
    if (fs.taps.empty()) {
      for (FeatureTap& tap : taps) {
        FeatureTap full;
        full.layer_index = tap.layer_index;
        full.name = tap.name;
        Shape shape = tap.features.shape();
        shape[0] = n;
        full.features = Tensor(shape);
        fs.taps.push_back(std::move(full));
      }
    }
    for (size_t t = 0; t < taps.size(); ++t) {
      const long tap_row = taps[t].features.numel() / cur;
      std::memcpy(fs.taps[t].features.data() + static_cast<long>(start) * tap_row,
                  taps[t].features.data(),
                  static_cast<size_t>(cur) * static_cast<size_t>(tap_row) * sizeof(float));
    }
  }
  model.set_training(was_training);
  return fs;
}

CSCurveSet classrepsim_features(const FeatureSet& features, const std::vector<Scale>& scales,
                                int neighbors, Metric metric) {
  if (features.taps.empty()) throw ValueError("classrepsim: no feature taps");
  if (scales.empty()) throw ValueError("classrepsim: no scales");
  const int n = features.sample_count();
  if (static_cast<int>(features.labels.size()) != n)
    throw ValueError("classrepsim: label count does not match features");

  CSCurveSet curves;
  curves.scales = scales;
  curves.neighbors = neighbors;
  curves.metric = metric;
  curves.sample_count = n;
  for (const FeatureTap& tap : features.taps) {
    curves.layer_indices.push_back(tap.layer_index);
    curves.layer_names.push_back(tap.name);
    std::vector<double> row;
    row.reserve(scales.size());
    for (const Scale& s : scales) {
      Tensor condensed = scale_features(tap.features, s);
      KnnGraph g = build_knn(condensed, neighbors, metric);
      row.push_back(class_similarity(g, features.labels));
    }
    curves.values.push_back(std::move(row));
  }
  return curves;
}

CSCurveSet classrepsim(Model& model, const LabeledDataset& dataset,
                       const std::vector<Scale>& scales, int neighbors, Metric metric,
                       int max_samples) {
  if (max_samples > 0 && max_samples <= neighbors)
    throw ValueError(strf("classrepsim: max_samples=%d must exceed M=%d", max_samples,
                          neighbors));
  FeatureSet fs = capture_features(model, dataset, max_samples);
  CSCurveSet curves = classrepsim_features(fs, scales, neighbors, metric);
  curves.dataset = dataset.split;
  return curves;
}

std::vector<Scale> peak_scale(const CSCurveSet& curves,
                              const std::vector<std::pair<int, int>>& stage_tap_ranges) {
  // Scale columns evaluated in ascending window order so exact ties resolve
  // to the smaller window.
  std::vector<size_t> cols(curves.scale_count());
  std::iota(cols.begin(), cols.end(), 0);
  std::sort(cols.begin(), cols.end(),
            [&](size_t a, size_t b) { return curves.scales[a] < curves.scales[b]; });

  std::vector<Scale> out;
  for (const auto& [lo, hi] : stage_tap_ranges) {
    std::vector<size_t> rows;
    for (size_t i = 0; i < curves.layer_count(); ++i)
      if (curves.layer_indices[i] >= lo && curves.layer_indices[i] < hi) rows.push_back(i);
    if (rows.empty())
      throw ValueError(strf("peak_scale: no taps with layer index in [%d,%d)", lo, hi));
    double best = -1.0;
    Scale best_scale = curves.scales.front();
    for (size_t c : cols) {
      double mean = 0.0;
      for (size_t rw : rows) mean += curves.values[rw][c];
      mean /= static_cast<double>(rows.size());
      if (mean > best) {
        best = mean;
        best_scale = curves.scales[c];
      }
    }
    out.push_back(best_scale);
  }
  return out;
}

std::pair<Tensor, std::vector<int>> toy_transition_dataset(double t, int n_per_class,
                                                           uint64_t seed) {
  if (t < 0.0 || t > 1.0) throw ValueError("toy_transition_dataset: t must be in [0,1]");
  if (n_per_class < 1) throw ValueError("toy_transition_dataset: n_per_class must be >= 1");
  // Center separation in sigma units: 10 at t=0 down to 3 at t=1; the t=1
  // endpoint puts the pipeline CS at ~0.9.
  const double separation = 10.0 - 7.0 * t;
  Rng rng(seed);
  const int n = 2 * n_per_class;
  Tensor features({n, 2});
  std::vector<int> labels(static_cast<size_t>(n));
  for (int k = 0; k < 2; ++k) {
    const double cx = (k == 0 ? -0.5 : 0.5) * separation;
    for (int i = 0; i < n_per_class; ++i) {
      const int idx = k * n_per_class + i;
      features.at2(idx, 0) = static_cast<float>(cx + rng.normal());
      features.at2(idx, 1) = static_cast<float>(rng.normal());
      labels[static_cast<size_t>(idx)] = k;
    }
  }
  return {std::move(features), std::move(labels)};
}

}  // namespace crs
