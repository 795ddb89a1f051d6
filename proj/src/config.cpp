#include "crs/config.hpp"

#include <fstream>
#include <sstream>

namespace crs {

ModelSpec ModelConfig::to_spec() const {
  if (channels.empty()) throw ConfigError("model.channels must name at least one stage");
  std::vector<int> blocks_per_stage = blocks;
  if (blocks_per_stage.size() == 1)
    blocks_per_stage.assign(channels.size(), blocks_per_stage.front());
  if (blocks_per_stage.size() != channels.size())
    throw ConfigError(strf("model.blocks lists %zu stages but model.channels lists %zu",
                           blocks_per_stage.size(), channels.size()));
  for (const auto& [stage, ov] : stage_overrides)
    if (stage < 1 || stage > static_cast<int>(channels.size()))
      throw ConfigError(strf("stage%d override out of range (model has %zu stages)", stage,
                             channels.size()));

  ModelSpec spec;
  spec.input_channels = input_channels;
  spec.input_size = input_size;
  spec.num_classes = num_classes;
  spec.width_multiplier = width_multiplier;
  spec.depth_multiplier = depth_multiplier;
  for (size_t s = 0; s < channels.size(); ++s) {
    StageSpec stage;
    stage.channels = channels[s];
    stage.num_blocks = blocks_per_stage[s];
    stage.attention = attention;
    auto it = stage_overrides.find(static_cast<int>(s) + 1);
    if (it != stage_overrides.end()) {
      const AttentionOverride& ov = it->second;
      if (ov.kind) stage.attention.kind = *ov.kind;
      if (ov.window) stage.attention.window = *ov.window;
      if (ov.k1) stage.attention.k1 = *ov.k1;
      if (ov.k2) stage.attention.k2 = *ov.k2;
      if (ov.placement) stage.attention.placement = *ov.placement;
    }
    spec.stages.push_back(stage);
  }
  return spec;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(strf("%s: expected an integer, got '%s'", key.c_str(), v.c_str()));
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(strf("%s: expected a non-negative integer, got '%s'", key.c_str(),
                           v.c_str()));
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(strf("%s: expected a number, got '%s'", key.c_str(), v.c_str()));
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(strf("%s: expected true/false, got '%s'", key.c_str(), v.c_str()));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_int(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

Scale parse_scale(const std::string& key, const std::string& v) {
  std::optional<Scale> s = Scale::parse(v);
  if (!s) throw ConfigError(strf("%s: expected a window size or 'global', got '%s'",
                                 key.c_str(), v.c_str()));
  return *s;
}

AttentionKind parse_kind(const std::string& key, const std::string& v) {
  if (v == "none") return AttentionKind::none;
  if (v == "stac") return AttentionKind::stac;
  if (v == "senet") return AttentionKind::senet;
  throw ConfigError(strf("%s: expected none|stac|senet, got '%s'", key.c_str(), v.c_str()));
}

Placement parse_placement(const std::string& key, const std::string& v) {
  if (v == "standard") return Placement::standard;
  if (v == "post") return Placement::post;
  throw ConfigError(strf("%s: expected standard|post, got '%s'", key.c_str(), v.c_str()));
}

/// "stage<N>.attention.<field>" -> (N, field); nullopt if not that shape.
std::optional<std::pair<int, std::string>> stage_attention_key(const std::string& key) {
  if (key.rfind("stage", 0) != 0) return std::nullopt;
  const size_t dot = key.find('.');
  if (dot == std::string::npos) return std::nullopt;
  const std::string idx = key.substr(5, dot - 5);
  if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos)
    return std::nullopt;
  const std::string rest = key.substr(dot + 1);
  if (rest.rfind("attention.", 0) != 0) return std::nullopt;
  return std::make_pair(std::stoi(idx), rest.substr(10));
}

void apply_model_key(ModelConfig& m, const std::string& key, const std::string& v) {
  const std::string full = "model." + key;
  if (key == "input_channels") m.input_channels = parse_int(full, v);
  else if (key == "input_size") m.input_size = parse_int(full, v);
  else if (key == "num_classes") m.num_classes = parse_int(full, v);
  else if (key == "channels") m.channels = parse_int_list(full, v);
  else if (key == "blocks") m.blocks = parse_int_list(full, v);
  else if (key == "width_multiplier") m.width_multiplier = parse_double(full, v);
  else if (key == "depth_multiplier") m.depth_multiplier = parse_int(full, v);
  else if (key == "attention.kind") m.attention.kind = parse_kind(full, v);
  else if (key == "attention.window") m.attention.window = parse_scale(full, v);
  else if (key == "attention.k1") m.attention.k1 = parse_int(full, v);
  else if (key == "attention.k2") m.attention.k2 = parse_int(full, v);
  else if (key == "attention.placement") m.attention.placement = parse_placement(full, v);
  else if (auto stage_key = stage_attention_key(key)) {
    AttentionOverride& ov = m.stage_overrides[stage_key->first];
    const std::string& field = stage_key->second;
    if (field == "kind") ov.kind = parse_kind(full, v);
    else if (field == "window") ov.window = parse_scale(full, v);
    else if (field == "k1") ov.k1 = parse_int(full, v);
    else if (field == "k2") ov.k2 = parse_int(full, v);
    else if (field == "placement") ov.placement = parse_placement(full, v);
    else throw ConfigError("unknown key: " + full);
  } else
    throw ConfigError("unknown key: " + full);
}

void apply_train_key(TrainConfig& t, const std::string& key, const std::string& v) {
  const std::string full = "train." + key;
  if (key == "epochs") t.epochs = parse_int(full, v);
  else if (key == "warmup_epochs") t.warmup_epochs = parse_int(full, v);
  else if (key == "base_lr") t.base_lr = parse_double(full, v);
  else if (key == "final_lr_fraction") t.final_lr_fraction = parse_double(full, v);
  else if (key == "momentum") t.momentum = parse_double(full, v);
  else if (key == "weight_decay") t.weight_decay = parse_double(full, v);
  else if (key == "batch_size") t.batch_size = parse_int(full, v);
  else if (key == "seed") t.seed = parse_u64(full, v);
  else if (key == "augment") t.augment = parse_bool(full, v);
  else throw ConfigError("unknown key: " + full);
}

void apply_analysis_key(AnalysisConfig& a, const std::string& key, const std::string& v) {
  const std::string full = "analysis." + key;
  if (key == "scales") {
    a.scales.clear();
    for (const std::string& item : split_list(v)) a.scales.push_back(parse_scale(full, item));
    if (a.scales.empty()) throw ConfigError(full + ": empty scale list");
  } else if (key == "M") a.neighbors = parse_int(full, v);
  else if (key == "metric") {
    if (v == "euclidean") a.metric = Metric::euclidean;
    else if (v == "cosine") a.metric = Metric::cosine;
    else throw ConfigError(strf("%s: expected euclidean|cosine, got '%s'", full.c_str(),
                                v.c_str()));
  } else if (key == "max_samples") a.max_samples = parse_int(full, v);
  else if (key == "split") {
    if (v != "train" && v != "test")
      throw ConfigError(strf("%s: expected train|test, got '%s'", full.c_str(), v.c_str()));
    a.split = v;
  } else throw ConfigError("unknown key: " + full);
}

void apply_data_key(DataConfig& d, const std::string& key, const std::string& v) {
  const std::string full = "data." + key;
  if (key == "source") {
    if (v == "cifar10") d.source = DataSource::cifar10;
    else if (v == "synth") d.source = DataSource::synth;
    else if (v == "dump") d.source = DataSource::dump;
    else throw ConfigError(strf("%s: expected cifar10|synth|dump, got '%s'", full.c_str(),
                                v.c_str()));
  } else if (key == "cifar_dir") d.cifar_dir = v;
  else if (key == "dump_path") d.dump_path = v;
  else if (key == "synth.classes") d.synth_classes = parse_int(full, v);
  else if (key == "synth.n_per_class") d.synth_n_per_class = parse_int(full, v);
  else if (key == "synth.size") d.synth_size = parse_int(full, v);
  else if (key == "synth.channels") d.synth_channels = parse_int(full, v);
  else if (key == "synth.separation") d.synth_separation = parse_double(full, v);
  else if (key == "synth.seed") d.synth_seed = parse_u64(full, v);
  else throw ConfigError("unknown key: " + full);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(strf("line %d: malformed section header '%s'", line_no,
                               line.c_str()));
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "analysis" &&
          section != "data" && section != "output")
        throw ConfigError(strf("line %d: unknown section [%s]", line_no, section.c_str()));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(strf("line %d: expected key = value, got '%s'", line_no, line.c_str()));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(strf("line %d: key '%s' appears before any [section]", line_no,
                             key.c_str()));
    if (key.empty()) throw ConfigError(strf("line %d: empty key", line_no));
    if (section == "model") apply_model_key(cfg.model, key, value);
    else if (section == "train") apply_train_key(cfg.train, key, value);
    else if (section == "analysis") apply_analysis_key(cfg.analysis, key, value);
    else if (section == "data") apply_data_key(cfg.data, key, value);
    else {  // output
      if (key == "dir") cfg.output.dir = value;
      else throw ConfigError("unknown key: output." + key);
    }
  }
  return cfg;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  auto num = [](double v) {
    std::string s = strf("%.10g", v);
    return s;
  };

  out << "[model]\n";
  out << "input_channels = " << cfg.model.input_channels << "\n";
  out << "input_size = " << cfg.model.input_size << "\n";
  out << "num_classes = " << cfg.model.num_classes << "\n";
  out << "channels = " << list(cfg.model.channels) << "\n";
  out << "blocks = " << list(cfg.model.blocks) << "\n";
  out << "width_multiplier = " << num(cfg.model.width_multiplier) << "\n";
  out << "depth_multiplier = " << cfg.model.depth_multiplier << "\n";
  out << "attention.kind = " << attention_kind_str(cfg.model.attention.kind) << "\n";
  out << "attention.window = " << cfg.model.attention.window.str() << "\n";
  out << "attention.k1 = " << cfg.model.attention.k1 << "\n";
  out << "attention.k2 = " << cfg.model.attention.k2 << "\n";
  out << "attention.placement = " << placement_str(cfg.model.attention.placement) << "\n";
  for (const auto& [stage, ov] : cfg.model.stage_overrides) {
    const std::string p = strf("stage%d.attention.", stage);
    if (ov.kind) out << p << "kind = " << attention_kind_str(*ov.kind) << "\n";
    if (ov.window) out << p << "window = " << ov.window->str() << "\n";
    if (ov.k1) out << p << "k1 = " << *ov.k1 << "\n";
    if (ov.k2) out << p << "k2 = " << *ov.k2 << "\n";
    if (ov.placement) out << p << "placement = " << placement_str(*ov.placement) << "\n";
  }

  out << "\n[train]\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "warmup_epochs = " << cfg.train.warmup_epochs << "\n";
  out << "base_lr = " << num(cfg.train.base_lr) << "\n";
  out << "final_lr_fraction = " << num(cfg.train.final_lr_fraction) << "\n";
  out << "momentum = " << num(cfg.train.momentum) << "\n";
  out << "weight_decay = " << num(cfg.train.weight_decay) << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "seed = " << cfg.train.seed << "\n";
  out << "augment = " << (cfg.train.augment ? "true" : "false") << "\n";

  out << "\n[analysis]\n";
  std::string scales;
  for (size_t i = 0; i < cfg.analysis.scales.size(); ++i)
    scales += (i ? "," : "") + cfg.analysis.scales[i].str();
  out << "scales = " << scales << "\n";
  out << "M = " << cfg.analysis.neighbors << "\n";
  out << "metric = " << metric_str(cfg.analysis.metric) << "\n";
  out << "max_samples = " << cfg.analysis.max_samples << "\n";
  out << "split = " << cfg.analysis.split << "\n";

  out << "\n[data]\n";
  const char* source = cfg.data.source == DataSource::cifar10  ? "cifar10"
                       : cfg.data.source == DataSource::synth ? "synth"
                                                              : "dump";
  out << "source = " << source << "\n";
  if (!cfg.data.cifar_dir.empty()) out << "cifar_dir = " << cfg.data.cifar_dir << "\n";
  if (!cfg.data.dump_path.empty()) out << "dump_path = " << cfg.data.dump_path << "\n";
  out << "synth.classes = " << cfg.data.synth_classes << "\n";
  out << "synth.n_per_class = " << cfg.data.synth_n_per_class << "\n";
  out << "synth.size = " << cfg.data.synth_size << "\n";
  out << "synth.channels = " << cfg.data.synth_channels << "\n";
  out << "synth.separation = " << num(cfg.data.synth_separation) << "\n";
  out << "synth.seed = " << cfg.data.synth_seed << "\n";

  out << "\n[output]\n";
  out << "dir = " << cfg.output.dir << "\n";
  return out.str();
}

}  // namespace crs
