#include "crs/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "crs/analysis.hpp"
#include "crs/config.hpp"
#include "crs/costmodel.hpp"
#include "crs/data_io.hpp"
#include "crs/train.hpp"

namespace fs = std::filesystem;

namespace crs {

namespace {

RunConfig load_config(const CliOptions& opts) {
  if (opts.config_path.empty()) throw ConfigError("--config is required");
  if (!fs::exists(opts.config_path))
    throw ConfigError("config file not found: " + opts.config_path);
  RunConfig cfg = parse_run_config_file(opts.config_path);
  if (!opts.out_dir.empty()) cfg.output.dir = opts.out_dir;
  if (opts.seed) cfg.train.seed = *opts.seed;
  try {
    cfg.train.validate();
    cfg.model.to_spec().resolved();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

void ensure_outdir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output.dir, ec);
  if (ec) throw ConfigError("cannot create output dir " + cfg.output.dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError(IoError::Kind::write_failed, "cannot open " + path);
  out << text;
  out.close();
  if (!out) throw IoError(IoError::Kind::write_failed, "write failed for " + path);
}

/// Timestamps live only here so every other artifact is bit-reproducible.
void append_run_log(const RunConfig& cfg, const std::string& what) {
  std::ofstream log(fs::path(cfg.output.dir) / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[64];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%d %H:%M:%S", std::gmtime(&now));
  log << stamp << "  " << what << "\n";
}

void write_resolved_config(const RunConfig& cfg) {
  write_text((fs::path(cfg.output.dir) / "config.resolved.ini").string(),
             serialize_run_config(cfg));
}

struct DataBundle {
  LabeledDataset train;
  LabeledDataset eval;
};

DataBundle load_train_data(const RunConfig& cfg) {
  DataBundle out;
  switch (cfg.data.source) {
    case DataSource::synth: {
      const DataConfig& d = cfg.data;
      out.train = synth_blobs(d.synth_classes, d.synth_n_per_class, d.synth_size,
                              d.synth_channels, d.synth_seed, d.synth_separation);
      out.train.split = "train";
      out.eval = synth_blobs(d.synth_classes, d.synth_n_per_class, d.synth_size,
                             d.synth_channels, d.synth_seed + 1, d.synth_separation);
      out.eval.split = "test";
      return out;
    }
    case DataSource::cifar10: {
      if (cfg.data.cifar_dir.empty())
        throw ConfigError("data.cifar_dir is required for source=cifar10");
      if (!fs::exists(cfg.data.cifar_dir))
        throw ConfigError("data.cifar_dir does not exist: " + cfg.data.cifar_dir);
      Cifar10 c = load_cifar10_binary(cfg.data.cifar_dir);
      out.train = std::move(c.train);
      out.eval = std::move(c.test);
      return out;
    }
    case DataSource::dump:
      throw ConfigError("data.source=dump provides features only; use `analyze --dump`");
  }
  throw ConfigError("unreachable data source");
}

const LabeledDataset& analysis_split(const RunConfig& cfg, const DataBundle& data) {
  return cfg.analysis.split == "test" ? data.eval : data.train;
}

std::string metrics_csv(const RunMetrics& m) {
  std::string out = "epoch,train_loss,train_top1,eval_top1,lr\n";
  for (int e = 0; e < m.epochs(); ++e)
    out += strf("%d,%.6f,%.6f,%.6f,%.8f\n", e + 1, m.train_loss[static_cast<size_t>(e)],
                m.train_top1[static_cast<size_t>(e)], m.eval_top1[static_cast<size_t>(e)],
                m.lr[static_cast<size_t>(e)]);
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() == 1) return {m, 0.0};
  double s2 = 0.0;
  for (double x : v) s2 += (x - m) * (x - m);
  return {m, std::sqrt(s2 / static_cast<double>(v.size() - 1))};
}

std::vector<uint64_t> effective_seeds(const CliOptions& opts, const RunConfig& cfg) {
  if (!opts.seeds.empty()) return opts.seeds;
  return {cfg.train.seed};
}

int guarded(const char* what, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s: config error: %s\n", what, e.what());
    return 2;
  } catch (const TrainAbort& e) {
    std::fprintf(stderr, "%s: %s\n", what, e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s: error: %s\n", what, e.what());
    return 1;
  }
}

// Per-stage attention layout helpers shared by the sweep axes.

ModelSpec spec_with_attention(const RunConfig& cfg,
                              const std::vector<AttentionSpec>& per_stage) {
  ModelConfig mc = cfg.model;
  mc.attention = AttentionSpec{};  // none
  mc.stage_overrides.clear();
  ModelSpec spec = mc.to_spec();
  for (size_t s = 0; s < spec.stages.size(); ++s) spec.stages[s].attention = per_stage[s];
  return spec;
}

AttentionSpec sweep_base_attention(const RunConfig& cfg) {
  AttentionSpec base = cfg.model.attention;
  if (base.kind == AttentionKind::none) {
    base.kind = AttentionKind::stac;
    base.window = Scale::of(8);
    base.k1 = base.k2 = 3;
    base.placement = Placement::standard;
  }
  return base;
}

struct CellResult {
  double acc_mean = 0.0;
  double acc_std = 0.0;
  long long flops = 0;
  long long params = 0;
};

CellResult run_cell(const RunConfig& cfg, const ModelSpec& spec,
                    const std::vector<uint64_t>& seeds, const DataBundle& data, bool quiet) {
  std::vector<double> accs;
  for (uint64_t seed : seeds) {
    Model model = build_model(spec, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    RunMetrics metrics = train(model, data.train, tc, &data.eval, true);
    accs.push_back(metrics.eval_top1.back());
    if (!quiet)
      std::printf("    seed %llu: eval top-1 %.4f\n", static_cast<unsigned long long>(seed),
                  accs.back());
  }
  CellResult r;
  std::tie(r.acc_mean, r.acc_std) = mean_std(accs);
  CostReport cost = cost_report(spec);
  r.flops = cost.total_flops;
  r.params = cost.total_params;
  return r;
}

int stage_feature_size(const ModelSpec& spec, size_t stage) {
  int h = spec.input_size;
  for (size_t s = 1; s <= stage; ++s) h = (h + 2 - 3) / 2 + 1;  // stride-2 3x3 pad-1 entry
  return h;
}

std::vector<Scale> viable_windows(int feature_size) {
  std::vector<Scale> out;
  for (int w = 1; w <= feature_size; w *= 2) out.push_back(Scale::of(w));
  out.push_back(Scale::global_scale());
  return out;
}

std::string windows_str(const std::vector<AttentionSpec>& per_stage) {
  std::string s;
  for (size_t i = 0; i < per_stage.size(); ++i) {
    if (i) s += "|";
    s += per_stage[i].kind == AttentionKind::none ? "-" : per_stage[i].window.str();
  }
  return s;
}

}  // namespace

int cmd_train(const CliOptions& opts) {
  return guarded("train", [&]() {
    RunConfig cfg = load_config(opts);

    ModelSpec spec = cfg.model.to_spec().resolved();
    DataBundle data = load_train_data(cfg);
    ensure_outdir(cfg);
    append_run_log(cfg, "train --config " + opts.config_path);

    const std::vector<uint64_t> seeds = effective_seeds(opts, cfg);
    const bool multi = seeds.size() > 1;
    std::vector<double> final_eval, final_train;
    for (uint64_t seed : seeds) {
      Model model = build_model(spec, seed);
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      if (!opts.quiet)
        std::printf("training seed %llu (%d epochs, %d train samples)\n",
                    static_cast<unsigned long long>(seed), tc.epochs, data.train.size());
      RunMetrics metrics = train(model, data.train, tc, &data.eval, opts.quiet);
      const std::string suffix = multi ? strf("_seed%llu", static_cast<unsigned long long>(seed))
                                       : std::string();
      const std::string ckpt = (fs::path(cfg.output.dir) / ("model" + suffix + ".ckpt")).string();
      checkpoint_save(model, ckpt);
      metrics.checkpoint = ckpt;
      write_text((fs::path(cfg.output.dir) / ("metrics" + suffix + ".csv")).string(),
                 metrics_csv(metrics));
      final_eval.push_back(metrics.eval_top1.back());
      final_train.push_back(metrics.train_top1.back());
      if (!opts.quiet)
        std::printf("seed %llu done: eval top-1 %.4f\n",
                    static_cast<unsigned long long>(seed), final_eval.back());
    }
    if (multi) {
      std::string csv = "seed,final_train_top1,final_eval_top1\n";
      for (size_t i = 0; i < seeds.size(); ++i)
        csv += strf("%llu,%.6f,%.6f\n", static_cast<unsigned long long>(seeds[i]),
                    final_train[i], final_eval[i]);
      auto [me, se] = mean_std(final_eval);
      auto [mt, st] = mean_std(final_train);
      csv += strf("mean,%.6f,%.6f\nstd,%.6f,%.6f\n", mt, me, st, se);
      write_text((fs::path(cfg.output.dir) / "summary.csv").string(), csv);
      if (!opts.quiet)
        std::printf("summary over %zu seeds: eval top-1 %.4f +- %.4f\n", seeds.size(), me, se);
    }
    write_resolved_config(cfg);
    return 0;
  });
}

int cmd_analyze(const CliOptions& opts) {
  return guarded("analyze", [&]() {
    RunConfig cfg = load_config(opts);
    ensure_outdir(cfg);
    append_run_log(cfg, "analyze --config " + opts.config_path);

    CSCurveSet curves;
    std::vector<std::pair<int, int>> stage_ranges;
    if (!opts.dump.empty()) {
      if (!fs::exists(opts.dump)) throw ConfigError("feature dump not found: " + opts.dump);
      FeatureSet fset = read_feature_dump(opts.dump);
      curves = classrepsim_features(fset, cfg.analysis.scales, cfg.analysis.neighbors,
                                    cfg.analysis.metric);
      curves.dataset = "dump";
      // Stage ranges can be recovered when tap names follow stageN.blockM.
      std::map<int, std::pair<int, int>> by_stage;
      for (const FeatureTap& tap : fset.taps) {
        int stage = 0;
        if (std::sscanf(tap.name.c_str(), "stage%d.", &stage) == 1) {
          auto it = by_stage.find(stage);
          if (it == by_stage.end())
            by_stage[stage] = {tap.layer_index, tap.layer_index + 1};
          else {
            it->second.first = std::min(it->second.first, tap.layer_index);
            it->second.second = std::max(it->second.second, tap.layer_index + 1);
          }
        }
      }
      for (auto& [stage, range] : by_stage) stage_ranges.push_back(range);
    } else {
      ModelSpec spec = cfg.model.to_spec().resolved();
      Model model = build_model(spec, cfg.train.seed);
      std::string ckpt = opts.checkpoint;
      if (ckpt.empty()) ckpt = (fs::path(cfg.output.dir) / "model.ckpt").string();
      if (!fs::exists(ckpt))
        throw ConfigError("checkpoint not found: " + ckpt +
                          " (pass --checkpoint or run `train` first)");
      checkpoint_load(model, ckpt);
      DataBundle data = load_train_data(cfg);
      curves = classrepsim(model, analysis_split(cfg, data), cfg.analysis.scales,
                           cfg.analysis.neighbors, cfg.analysis.metric,
                           cfg.analysis.max_samples);
      curves.model_id = ckpt;
      stage_ranges = model.stage_tap_ranges();
    }

    write_cs_csv(curves, (fs::path(cfg.output.dir) / "cs.csv").string());
    if (!stage_ranges.empty()) {
      std::vector<Scale> peaks = peak_scale(curves, stage_ranges);
      nlohmann::ordered_json j;
      j["strategy"] = "max_cs";
      j["stages"] = nlohmann::ordered_json::array();
      for (size_t s = 0; s < peaks.size(); ++s) {
        nlohmann::ordered_json stage;
        stage["stage"] = s + 1;
        stage["window"] = peaks[s].str();
        j["stages"].push_back(std::move(stage));
      }
      write_text((fs::path(cfg.output.dir) / "peak_scales.json").string(), j.dump(2) + "\n");
      if (!opts.quiet) {
        std::printf("max-CS windows per stage:");
        for (const Scale& s : peaks) std::printf(" %s", s.str().c_str());
        std::printf("\n");
      }
    }
    write_resolved_config(cfg);
    if (!opts.quiet)
      std::printf("wrote %zu taps x %zu scales to %s/cs.csv\n", curves.layer_count(),
                  curves.scale_count(), cfg.output.dir.c_str());
    return 0;
  });
}

int cmd_cost(const CliOptions& opts) {
  return guarded("cost", [&]() {
    if (opts.table) {
      std::vector<std::string> paths = opts.table_configs;
      if (!opts.config_path.empty())
        paths.insert(paths.begin(), opts.config_path);
      if (paths.empty()) throw ConfigError("cost --table needs at least one config");
      std::string csv = "config,flops,params\n";
      std::printf("%-40s %14s %12s\n", "config", "flops", "params");
      std::string out_dir = opts.out_dir;
      for (const std::string& path : paths) {
        if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
        RunConfig cfg = parse_run_config_file(path);
        if (out_dir.empty()) out_dir = cfg.output.dir;
        ModelSpec spec;
        try {
          spec = cfg.model.to_spec().resolved();
        } catch (const ValueError& e) {
          throw ConfigError(path + ": " + e.what());
        }
        CostReport r = cost_report(spec);
        csv += strf("%s,%lld,%lld\n", path.c_str(), r.total_flops, r.total_params);
        std::printf("%-40s %14lld %12lld\n", path.c_str(), r.total_flops, r.total_params);
      }
      std::error_code ec;
      fs::create_directories(out_dir, ec);
      write_text((fs::path(out_dir) / "cost_table.csv").string(), csv);
      return 0;
    }

    RunConfig cfg = load_config(opts);
    ensure_outdir(cfg);
    append_run_log(cfg, "cost --config " + opts.config_path);
    CostReport report = cost_report(cfg.model.to_spec());
    const std::string json = report_json(report);
    if (!opts.quiet) std::fputs(json.c_str(), stdout);
    write_text((fs::path(cfg.output.dir) / "cost.json").string(), json);
    write_resolved_config(cfg);
    return 0;
  });
}

int cmd_sweep(const CliOptions& opts) {
  return guarded("sweep", [&]() {
    RunConfig cfg = load_config(opts);
    // Grids run at reduced scale by default: a full-budget config would cost
    // one complete training per cell. --paper-scale lifts the cap.
    if (!opts.paper_scale && cfg.train.epochs > 10) {
      cfg.train.epochs = 10;
      cfg.train.warmup_epochs = std::min(cfg.train.warmup_epochs, 1);
      if (!opts.quiet)
        std::printf("sweep: capping training at %d epochs per cell (use --paper-scale for the "
                    "full budget)\n",
                    cfg.train.epochs);
    }
    ensure_outdir(cfg);
    append_run_log(cfg, "sweep --axis " + opts.axis);
    DataBundle data = load_train_data(cfg);
    const std::vector<uint64_t> seeds = effective_seeds(opts, cfg);
    const AttentionSpec base = sweep_base_attention(cfg);
    const size_t n_stages = cfg.model.channels.size();
    const AttentionSpec off;  // kind=none

    struct Row {
      std::string label;
      std::string windows;
      CellResult cell;
    };
    std::vector<Row> rows;
    auto run_row = [&](const std::string& label, const std::vector<AttentionSpec>& per_stage) {
      if (!opts.quiet) std::printf("  cell %s (%s)\n", label.c_str(),
                                   windows_str(per_stage).c_str());
      ModelSpec spec = spec_with_attention(cfg, per_stage);
      rows.push_back({label, windows_str(per_stage), run_cell(cfg, spec, seeds, data,
                                                              opts.quiet)});
    };

    if (opts.axis == "stage_location") {
      run_row("none", std::vector<AttentionSpec>(n_stages, off));
      for (size_t s = 0; s < n_stages; ++s) {
        std::vector<AttentionSpec> per(n_stages, off);
        per[s] = base;
        run_row(strf("stage%zu", s + 1), per);
      }
      run_row("all", std::vector<AttentionSpec>(n_stages, base));
    } else if (opts.axis == "condenser_size") {
      for (const Scale& w : {Scale::of(1), Scale::of(2), Scale::of(4), Scale::of(8),
                             Scale::global_scale()}) {
        AttentionSpec a = base;
        a.window = w;
        run_row(w.str(), std::vector<AttentionSpec>(n_stages, a));
      }
    } else if (opts.axis == "kernel_size") {
      for (const auto& [k1, k2] :
           std::vector<std::pair<int, int>>{{1, 1}, {1, 3}, {3, 1}, {3, 3}}) {
        AttentionSpec a = base;
        a.k1 = k1;
        a.k2 = k2;
        run_row(strf("k1=%d,k2=%d", k1, k2), std::vector<AttentionSpec>(n_stages, a));
      }
    } else if (opts.axis == "strategy") {
      const ModelSpec plain = spec_with_attention(cfg, std::vector<AttentionSpec>(n_stages, off));

      // Greedy: best window per stage, searched stage by stage.
      {
        std::vector<AttentionSpec> chosen(n_stages, base);
        for (size_t s = 0; s < n_stages; ++s) {
          double best_acc = -1.0;
          Scale best_window = Scale::of(1);
          for (const Scale& w : viable_windows(stage_feature_size(plain, s))) {
            std::vector<AttentionSpec> per(n_stages, off);
            per[s] = base;
            per[s].window = w;
            CellResult r = run_cell(cfg, spec_with_attention(cfg, per), {seeds.front()}, data,
                                    true);
            if (!opts.quiet)
              std::printf("  greedy probe stage%zu window %s: %.4f\n", s + 1, w.str().c_str(),
                          r.acc_mean);
            if (r.acc_mean > best_acc) {
              best_acc = r.acc_mean;
              best_window = w;
            }
          }
          chosen[s].window = best_window;
        }
        run_row("greedy", chosen);
      }

      // Max CS: peak-CS window per stage measured on a trained baseline.
      {
        Model probe = build_model(plain, seeds.front());
        TrainConfig tc = cfg.train;
        tc.seed = seeds.front();
        train(probe, data.train, tc, &data.eval, true);
        CSCurveSet curves = classrepsim(probe, analysis_split(cfg, data), cfg.analysis.scales,
                                        cfg.analysis.neighbors, cfg.analysis.metric,
                                        cfg.analysis.max_samples);
        std::vector<Scale> peaks = peak_scale(curves, probe.stage_tap_ranges());
        std::vector<AttentionSpec> per(n_stages, base);
        for (size_t s = 0; s < n_stages; ++s) per[s].window = peaks[s];
        run_row("max_cs", per);
      }

      // Max uniform: final-stage feature size everywhere.
      {
        AttentionSpec a = base;
        a.window = Scale::of(stage_feature_size(plain, n_stages - 1));
        run_row("max_uniform", std::vector<AttentionSpec>(n_stages, a));
      }
    } else {
      throw ConfigError("unknown sweep axis: " + opts.axis +
                        " (expected stage_location|condenser_size|kernel_size|strategy)");
    }

    std::string csv = "label,windows,acc_mean,acc_std,flops,params\n";
    for (const Row& r : rows)
      csv += strf("%s,%s,%.6f,%.6f,%lld,%lld\n", r.label.c_str(), r.windows.c_str(),
                  r.cell.acc_mean, r.cell.acc_std, r.cell.flops, r.cell.params);
    write_text((fs::path(cfg.output.dir) / ("sweep_" + opts.axis + ".csv")).string(), csv);
    write_resolved_config(cfg);
    if (!opts.quiet) std::fputs(csv.c_str(), stdout);
    return 0;
  });
}

int cmd_toy(const CliOptions& opts) {
  return guarded("toy", [&]() {
    RunConfig cfg = load_config(opts);
    if (opts.t_steps < 1) throw ConfigError("toy: --t-steps must be >= 1");
    ensure_outdir(cfg);
    append_run_log(cfg, strf("toy --t-steps %d", opts.t_steps));

    const int n_per_class = 500;
    std::string csv = "t,cs\n";
    for (int i = 0; i < opts.t_steps; ++i) {
      const double t = opts.t_steps == 1
                           ? 0.0
                           : static_cast<double>(i) / static_cast<double>(opts.t_steps - 1);
      auto [features, labels] = toy_transition_dataset(t, n_per_class, cfg.train.seed);
      KnnGraph g = build_knn(features, cfg.analysis.neighbors, cfg.analysis.metric);
      const double cs = class_similarity(g, labels);
      csv += strf("%.4f,%.6f\n", t, cs);
      if (!opts.quiet) std::printf("t=%.2f  cs=%.4f\n", t, cs);
    }
    write_text((fs::path(cfg.output.dir) / "toy_cs.csv").string(), csv);
    write_resolved_config(cfg);
    return 0;
  });
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"ClassRepSim analysis, STAC model training, and cost reporting"};
  app.require_subcommand(1);

  CliOptions opts;
  std::string seeds_csv;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", opts.config_path, "run configuration file");
    if (config_required) c->required();
    sub->add_option("--out", opts.out_dir, "output directory (overrides [output] dir)");
    sub->add_option("--seed", [&opts](const CLI::results_t& res) {
      try {
        opts.seed = std::stoull(res.front());
        return true;
      } catch (const std::exception&) {
        return false;
      }
    }, "seed override");
    sub->add_option("--seeds", seeds_csv, "comma-separated seed list for multi-run averaging");
    sub->add_flag("--quiet", opts.quiet, "suppress progress output");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
  add_common(train_cmd, true);
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "run ClassRepSim over a checkpoint");
  add_common(analyze_cmd, true);
  analyze_cmd->add_option("--checkpoint", opts.checkpoint, "checkpoint path");
  analyze_cmd->add_option("--dump", opts.dump, "analyze a CRSF feature dump instead");
  CLI::App* cost_cmd = app.add_subcommand("cost", "static FLOPs/parameter report");
  add_common(cost_cmd, false);
  cost_cmd->add_flag("--table", opts.table, "emit a comparison table over config files");
  cost_cmd->add_option("configs", opts.table_configs, "config files for --table");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run an ablation grid");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--axis", opts.axis, "stage_location|condenser_size|kernel_size|strategy")
      ->required();
  sweep_cmd->add_flag("--paper-scale", opts.paper_scale,
                      "run every cell at the full configured training budget");
  CLI::App* toy_cmd = app.add_subcommand("toy", "two-cluster CS transition curve");
  add_common(toy_cmd, true);
  toy_cmd->add_option("--t-steps", opts.t_steps, "number of transition states");

  std::vector<const char*> argv;
  argv.push_back("classrepsim");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (!seeds_csv.empty()) {
    try {
      std::istringstream ss(seeds_csv);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) opts.seeds.push_back(std::stoull(item));
      }
    } catch (const std::exception&) {
      std::fprintf(stderr, "bad --seeds list: %s\n", seeds_csv.c_str());
      return 2;
    }
  }

  if (train_cmd->parsed()) return cmd_train(opts);
  if (analyze_cmd->parsed()) return cmd_analyze(opts);
  if (cost_cmd->parsed()) return cmd_cost(opts);
  if (sweep_cmd->parsed()) return cmd_sweep(opts);
  if (toy_cmd->parsed()) return cmd_toy(opts);
  return 2;
}

}  // namespace crs
