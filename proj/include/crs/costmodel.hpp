#pragma once

#include <string>
#include <vector>

#include "crs/model_spec.hpp"

namespace crs {

struct CostEntry {
  std::string name;
  long long flops = 0;
  long long params = 0;
};

/// Static per-layer multiply-accumulate and parameter counts for a
/// ModelSpec. FLOPs convention: one MAC = one FLOP; conv and linear layers
/// only (batchnorm, activations, pooling, upsampling and elementwise ops
/// count as zero). Attention convs run at the condensed resolution.
struct CostReport {
  long long total_flops = 0;
  long long total_params = 0;
  std::vector<CostEntry> per_layer;
  int input_channels = 0;
  int input_size = 0;
};

/// Full cost table for a ModelSpec at the given input size (spec.input_size
/// when input_size <= 0).
CostReport cost_report(const ModelSpec& spec, int input_size = -1);

/// Parameter tally (FLOPs still populated; provided for the param-only
/// contract). Must equal the built model's actual scalar parameter count.
CostReport count_params(const ModelSpec& spec);

CostReport count_flops(const ModelSpec& spec, int input_size = -1);

/// Stable-ordered JSON serialization with exact integers.
std::string report_json(const CostReport& report);
CostReport report_from_json(const std::string& text);

}  // namespace crs
