#pragma once

#include <string>
#include <vector>

#include "crs/common.hpp"

namespace crs {

enum class Metric { euclidean, cosine };

inline std::string metric_str(Metric m) {
  return m == Metric::euclidean ? "euclidean" : "cosine";
}

/// Class-similarity values per (layer tap, scale): values[i][s] in [0,1].
struct CSCurveSet {
  std::vector<Scale> scales;
  std::vector<int> layer_indices;
  std::vector<std::string> layer_names;
  std::vector<std::vector<double>> values;  // [layer][scale]

  // provenance
  int neighbors = 0;
  Metric metric = Metric::euclidean;
  int sample_count = 0;
  std::string dataset;
  std::string model_id;

  size_t layer_count() const { return layer_indices.size(); }
  size_t scale_count() const { return scales.size(); }

  int scale_pos(const Scale& s) const {
    for (size_t i = 0; i < scales.size(); ++i)
      if (scales[i] == s) return static_cast<int>(i);
    return -1;
  }
};

}  // namespace crs
