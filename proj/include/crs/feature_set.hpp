#pragma once

#include <string>
#include <vector>

#include "crs/tensor.hpp"

namespace crs {

/// One captured activation: rank-4 feature map or rank-2 vector batch.
struct FeatureTap {
  int layer_index = 0;
  std::string name;
  Tensor features;
};

/// Ordered taps over a common sample batch plus ground-truth labels.
struct FeatureSet {
  std::vector<FeatureTap> taps;
  std::vector<int> labels;

  int sample_count() const {
    return taps.empty() ? static_cast<int>(labels.size()) : taps.front().features.dim(0);
  }
};

}  // namespace crs
