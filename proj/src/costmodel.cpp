#include "crs/costmodel.hpp"

#include <json.hpp>

namespace crs {

namespace {

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

int pooled_dim(int in, const Scale& window) {
  if (window.global) return 1;
  const int w = std::min(window.window, in);
  return (in + w - 1) / w;
}

}  // namespace

CostReport cost_report(const ModelSpec& raw_spec, int input_size) {
  const ModelSpec spec = raw_spec.resolved();
  const int in_size = input_size > 0 ? input_size : spec.input_size;

  CostReport r;
  r.input_channels = spec.input_channels;
  r.input_size = in_size;
  auto entry = [&](const std::string& name, long long flops, long long params) {
    r.per_layer.push_back({name, flops, params});
    r.total_flops += flops;
    r.total_params += params;
  };
  auto conv = [&](const std::string& name, int cin, int cout, int k, int out_hw, bool bias) {
    const long long params = static_cast<long long>(k) * k * cin * cout + (bias ? cout : 0);
    const long long flops =
        static_cast<long long>(k) * k * cin * cout * out_hw * out_hw;
    entry(name, flops, params);
  };
  auto bn = [&](const std::string& name, int c) { entry(name, 0, 2LL * c); };

  int h = in_size;
  int in_ch = spec.input_channels;
  conv("neck.conv", in_ch, spec.stages.front().channels, 3, conv_out(h, 3, 1, 1), false);
  h = conv_out(h, 3, 1, 1);
  bn("neck.bn", spec.stages.front().channels);
  in_ch = spec.stages.front().channels;

  for (size_t s = 0; s < spec.stages.size(); ++s) {
    const StageSpec& stage = spec.stages[s];
    for (int b = 0; b < stage.num_blocks; ++b) {
      const std::string name = strf("stage%zu.block%d", s + 1, b + 1);
      const bool downsample = (b == 0 && s > 0);
      const int stride = downsample ? 2 : 1;
      const int h_out = conv_out(h, 3, stride, 1);
      conv(name + ".conv1", in_ch, stage.channels, 3, h_out, false);
      bn(name + ".bn1", stage.channels);
      conv(name + ".conv2", stage.channels, stage.channels, 3, h_out, false);
      bn(name + ".bn2", stage.channels);
      if (downsample || in_ch != stage.channels) {
        // 1x1 stride-s projection; output size matches the block output.
        const long long params = static_cast<long long>(in_ch) * stage.channels;
        entry(name + ".proj", params * h_out * h_out, params);
        bn(name + ".proj_bn", stage.channels);
      }
      if (stage.attention.kind != AttentionKind::none) {
        const std::string base = name + "." + attention_kind_str(stage.attention.kind);
        const int p = pooled_dim(h_out, stage.attention.window);
        const int c = stage.channels;
        auto attn_conv = [&](const std::string& cname, int k) {
          const long long params = static_cast<long long>(k) * k * c * c + c;
          const long long flops = static_cast<long long>(k) * k * c * c * p * p;
          entry(cname, flops, params);
        };
        attn_conv(base + ".c1", stage.attention.k1);
        attn_conv(base + ".c2", stage.attention.k2);
      }
      h = h_out;
      in_ch = stage.channels;
    }
  }

  const int feat = spec.stages.back().channels;
  entry("fc", static_cast<long long>(feat) * spec.num_classes,
        static_cast<long long>(feat) * spec.num_classes + spec.num_classes);
  return r;
}

CostReport count_params(const ModelSpec& spec) { return cost_report(spec); }

CostReport count_flops(const ModelSpec& spec, int input_size) {
  return cost_report(spec, input_size);
}

std::string report_json(const CostReport& report) {
  nlohmann::ordered_json j;
  j["input_channels"] = report.input_channels;
  j["input_size"] = report.input_size;
  j["total_flops"] = report.total_flops;
  j["total_params"] = report.total_params;
  j["per_layer"] = nlohmann::ordered_json::array();
  for (const CostEntry& e : report.per_layer) {
    nlohmann::ordered_json le;
    le["name"] = e.name;
    le["flops"] = e.flops;
    le["params"] = e.params;
    j["per_layer"].push_back(std::move(le));
  }
  return j.dump(2) + "\n";
}

CostReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_format, strf("cost report parse failed: %s", e.what()));
  }
  CostReport r;
  try {
    r.input_channels = j.at("input_channels").get<int>();
    r.input_size = j.at("input_size").get<int>();
    r.total_flops = j.at("total_flops").get<long long>();
    r.total_params = j.at("total_params").get<long long>();
    for (const auto& le : j.at("per_layer")) {
      CostEntry e;
      e.name = le.at("name").get<std::string>();
      e.flops = le.at("flops").get<long long>();
      e.params = le.at("params").get<long long>();
      r.per_layer.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_format, strf("cost report fields invalid: %s", e.what()));
  }
  return r;
}

}  // namespace crs
