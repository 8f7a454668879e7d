// aufa: command-line driver for synthetic data, training, evaluation and
// exports. Every run writes run_manifest.json next to its outputs; `aufa
// rerun <manifest>` replays it.

#include <omp.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "aufa/connectome.hpp"
#include "aufa/csv.hpp"
#include "aufa/error.hpp"
#include "aufa/evalreport.hpp"
#include "aufa/gradsuite.hpp"
#include "aufa/kernels.hpp"
#include "aufa/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aufa;

namespace {

constexpr const char* kOutEnv = "AUFA_OUT_DIR";
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string default_out_dir() {
  const char* env = std::getenv(kOutEnv);
  return env && *env ? env : "aufa_out";
}

// Outputs go to a staging directory that is renamed into place only once
// the command has succeeded.
class OutputDir {
 public:
  OutputDir(fs::path final_dir, bool overwrite) : final_(fs::absolute(final_dir).lexically_normal()), overwrite_(overwrite) {
    if (final_.filename().empty()) final_ = final_.parent_path();
    if (fs::exists(final_) && !overwrite_) {
      throw Error(ErrorKind::InvalidArgument,
                  "output directory " + final_.string() + " already exists (pass --overwrite to replace it)");
    }
    staging_ = final_.parent_path() / (final_.filename().string() + ".partial");
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }

  fs::path file(const std::string& name) {
    files_.push_back(name);
    return staging_ / name;
  }
  const fs::path& final_path() const { return final_; }

  void commit() {
    if (fs::exists(final_)) fs::remove_all(final_);
    fs::rename(staging_, final_);
  }

 private:
  fs::path final_;
  fs::path staging_;
  bool overwrite_;
  std::vector<std::string> files_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path, ErrorKind parse_kind = ErrorKind::InvalidConfig) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(parse_kind, path.string() + ": " + e.what());
  }
}

void require_input(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, std::string(what) + " not found: " + path);
}

std::string absolute_string(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

// ---- site specs ---------------------------------------------------------------

json to_json(const SiteSpec& s) {
  return json{{"n_subjects_per_class", s.n_subjects_per_class},
              {"n_rois", s.n_rois},
              {"series_length", s.series_length},
              {"class_separation", s.class_separation},
              {"shift_rotation_strength", s.shift_rotation_strength},
              {"shift_offset_strength", s.shift_offset_strength},
              {"noise_std", s.noise_std},
              {"seed", s.seed},
              {"site_id", s.site_id}};
}

SiteSpec site_spec_from_json(const json& j, SiteSpec s) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "site spec must be a JSON object");
  const json known = to_json(s);
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw Error(ErrorKind::InvalidConfig, "site spec: unknown field '" + key + "'");
  try {
    s.n_subjects_per_class = j.value("n_subjects_per_class", s.n_subjects_per_class);
    s.n_rois = j.value("n_rois", s.n_rois);
    s.series_length = j.value("series_length", s.series_length);
    s.class_separation = j.value("class_separation", s.class_separation);
    s.shift_rotation_strength = j.value("shift_rotation_strength", s.shift_rotation_strength);
    s.shift_offset_strength = j.value("shift_offset_strength", s.shift_offset_strength);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.seed = j.value("seed", s.seed);
    s.site_id = j.value("site_id", s.site_id);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("site spec: ") + e.what());
  }
  s.validate();
  return s;
}

fs::path save_series(const SyntheticSeries& s, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir / name);
  json subjects = json::array();
  for (std::size_t i = 0; i < s.series.size(); ++i) {
    const TimeSeries& ts = s.series[i];
    const fs::path rel = fs::path(name) / (ts.subject_id + ".csv");
    write_csv_matrix(dir / rel, ts.values);
    subjects.push_back(
        {{"id", ts.subject_id}, {"path", rel.generic_string()}, {"kind", "timeseries"}, {"site", ts.site_id},
         {"label", s.labels[i]}});
  }
  const fs::path manifest = dir / (name + ".json");
  write_json(manifest, {{"n_rois", s.series.empty() ? 0 : s.series.front().n_rois()}, {"subjects", subjects}});
  return manifest;
}

// ---- training options ---------------------------------------------------------

struct TrainFlags {
  std::string config_path;
  std::optional<double> lr, lambda1, lambda2, epsilon, gamma, gamma_max;
  std::optional<std::size_t> epochs_pretrain, epochs_adapt, batch_size, n_layers, n_heads, d_head, ffn_hidden,
      classifier_hidden;
  std::optional<std::uint64_t> seed;
  bool no_eval_each_epoch = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with TrainConfig fields")->check(CLI::ExistingFile);
    app->add_option("--lr", lr);
    app->add_option("--lambda1", lambda1, "weight of the domain alignment loss");
    app->add_option("--lambda2", lambda2, "weight of the augmentation consistency loss");
    app->add_option("--epsilon", epsilon, "confidence filter threshold");
    app->add_option("--gamma", gamma, "fixed mixing coefficient");
    app->add_option("--gamma-max", gamma_max, "mixing coefficient drawn from uniform(0, max)");
    app->add_option("--epochs-pretrain", epochs_pretrain);
    app->add_option("--epochs-adapt", epochs_adapt);
    app->add_option("--batch-size", batch_size);
    app->add_option("--n-layers", n_layers);
    app->add_option("--n-heads", n_heads);
    app->add_option("--d-head", d_head);
    app->add_option("--ffn-hidden", ffn_hidden);
    app->add_option("--classifier-hidden", classifier_hidden);
    app->add_option("--seed", seed);
    app->add_flag("--no-epoch-eval", no_eval_each_epoch, "skip per-epoch evaluation on --eval");
  }

  // File values override `base`, flags override the file.
  TrainConfig resolve(const TrainConfig& base) const {
    TrainConfig c = base;
    if (!config_path.empty()) c = train_config_from_json(read_json(config_path), c);
    json o = json::object();
    auto put = [&](const char* key, const auto& v) {
      if (v) o[key] = *v;
    };
    put("lr", lr);
    put("lambda1", lambda1);
    put("lambda2", lambda2);
    put("epsilon", epsilon);
    put("epochs_pretrain", epochs_pretrain);
    put("epochs_adapt", epochs_adapt);
    put("batch_size", batch_size);
    put("n_layers", n_layers);
    put("n_heads", n_heads);
    put("d_head", d_head);
    put("ffn_hidden", ffn_hidden);
    put("classifier_hidden", classifier_hidden);
    put("seed", seed);
    if (gamma && gamma_max) throw Error(ErrorKind::InvalidConfig, "--gamma and --gamma-max are exclusive");
    if (gamma) o["gamma_policy"] = {{"kind", "fixed"}, {"value", *gamma}};
    if (gamma_max) o["gamma_policy"] = {{"kind", "uniform"}, {"max", *gamma_max}};
    if (no_eval_each_epoch) o["eval_each_epoch"] = false;
    return train_config_from_json(o, c);
  }
};

void check_same_architecture(const TrainConfig& a, const TrainConfig& b) {
  if (a.n_layers != b.n_layers || a.n_heads != b.n_heads || a.d_head != b.d_head || a.ffn_hidden != b.ffn_hidden ||
      a.classifier_hidden != b.classifier_hidden || a.ln_eps != b.ln_eps) {
    throw Error(ErrorKind::InvalidConfig, "architecture fields differ from the checkpoint");
  }
}

// ---- manifest -------------------------------------------------------------------

struct RunContext {
  std::string command;
  std::vector<std::string> args;  // subcommand and its options, as given
  json inputs = json::object();
  std::optional<TrainConfig> config;
  std::string config_path;
  bool serial = false;
};

void write_manifest(OutputDir& out, const RunContext& ctx) {
  json m{{"command", ctx.command},
         {"args", ctx.args},
         {"cwd", fs::current_path().string()},
         {"inputs", ctx.inputs},
         {"config_path", absolute_string(ctx.config_path)},
         {"output_dir", out.final_path().string()},
         {"serial", ctx.serial}};
  if (ctx.config) {
    m["config"] = aufa::to_json(*ctx.config);
    m["seed"] = ctx.config->seed;
  }
  write_json(out.file("run_manifest.json"), m);
}

void print_log(const RunLog& log) {
  for (const auto& r : log.epochs) {
    std::cout << r.stage << " epoch " << r.epoch << "  L=" << r.loss << "  L_C=" << r.loss_c << "  L_M=" << r.loss_m
              << "  L_A=" << r.loss_a << "  kept=" << r.kept_fraction;
    if (r.target_accuracy) std::cout << "  target_acc=" << *r.target_accuracy;
    std::cout << '\n';
  }
}

void write_predictions(const fs::path& path, const Dataset& ds, const Matrix& probs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << "subject_id,site,label,p_mdd,predicted\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Subject& s = ds.subjects[i];
    out << s.id << ',' << s.site << ',';
    if (s.label) out << *s.label;
    out << ',' << format_double(probs(i, 1)) << ',' << (probs(i, 1) > probs(i, 0) ? 1 : 0) << '\n';
  }
}

struct Options {
  bool serial = false;
  bool overwrite = false;
  std::string out_dir = default_out_dir();

  // synth
  std::string spec_path;
  SiteSpec src_spec, tgt_spec;
  bool emit_series = false;
  // datasets and checkpoints
  std::string source, target, data, checkpoint, eval_data, manifest;
  std::vector<std::string> series_files;
  TrainFlags train;
  std::size_t top_k = 10;
  std::string mode = "raw";
  std::size_t seeds = 5;
};

int execute(const std::vector<std::string>& argv_in);

int run_command(CLI::App& app, Options& o, RunContext& ctx) {
  const std::string cmd = ctx.command;
  if (cmd == "rerun") {
    const json m = read_json(o.manifest, ErrorKind::Format);
    std::vector<std::string> argv = {"aufa", "--serial", "--overwrite", "--out",
                                     fs::absolute(o.out_dir).lexically_normal().string()};
    for (const auto& a : m.at("args")) argv.push_back(a.get<std::string>());
    const fs::path here = fs::current_path();
    fs::current_path(m.at("cwd").get<std::string>());
    const int rc = execute(argv);
    fs::current_path(here);
    return rc;
  }

  OutputDir out(o.out_dir, o.overwrite);

  if (cmd == "synth") {
    SiteSpec src = o.src_spec, tgt = o.tgt_spec;
    if (!o.spec_path.empty()) {
      const json j = read_json(o.spec_path);
      if (j.contains("source")) src = site_spec_from_json(j["source"], src);
      if (j.contains("target")) tgt = site_spec_from_json(j["target"], tgt);
    }
    src.validate();
    tgt.validate();
    const auto [s_series, t_series] = synth_multisite_series(src, tgt);
    const fs::path dir = out.file("");
    save_dataset(to_dataset(s_series, src.n_rois), dir, "source");
    save_dataset(to_dataset(t_series, tgt.n_rois), dir, "target");
    if (o.emit_series) {
      save_series(s_series, dir, "source_series");
      save_series(t_series, dir, "target_series");
    }
    write_json(out.file("site_specs.json"), {{"source", to_json(src)}, {"target", to_json(tgt)}});
    std::cout << "wrote " << s_series.series.size() << " source and " << t_series.series.size()
              << " target subjects\n";
  } else if (cmd == "fcn") {
    if (!o.manifest.empty()) {
      require_input(o.manifest, "manifest");
      ctx.inputs["manifest"] = absolute_string(o.manifest);
      const Dataset ds = load_dataset(o.manifest);
      save_dataset(ds, out.file(""), "fcn");
      std::cout << "wrote " << ds.size() << " connectivity matrices\n";
    } else {
      if (o.series_files.empty()) throw Error(ErrorKind::InvalidConfig, "fcn needs --manifest or input files");
      json files = json::array();
      for (const auto& f : o.series_files) {
        require_input(f, "time series");
        files.push_back(absolute_string(f));
      }
      ctx.inputs["series"] = files;
      for (const auto& f : o.series_files) {
        const ConnectivityMatrix fcn = pearson_fcn(load_timeseries(f, fs::path(f).stem().string()));
        write_csv_matrix(out.file(fs::path(f).stem().string() + "_fcn.csv"), fcn.values());
      }
      std::cout << "wrote " << o.series_files.size() << " connectivity matrices\n";
    }
  } else if (cmd == "pretrain" || cmd == "adapt") {
    require_input(o.source, "source manifest");
    ctx.inputs["source"] = absolute_string(o.source);
    if (cmd == "adapt") {
      require_input(o.target, "target manifest");
      ctx.inputs["target"] = absolute_string(o.target);
    }
    if (!o.eval_data.empty()) {
      require_input(o.eval_data, "evaluation manifest");
      ctx.inputs["eval"] = absolute_string(o.eval_data);
    }
    std::optional<LoadedCheckpoint> start;
    if (!o.checkpoint.empty()) {
      require_input(o.checkpoint, "checkpoint");
      ctx.inputs["checkpoint"] = absolute_string(o.checkpoint);
    } else if (cmd == "adapt") {
      throw Error(ErrorKind::InvalidConfig, "adapt needs --checkpoint from a pretrain run");
    }
    if (!o.checkpoint.empty()) start = load_checkpoint(o.checkpoint);
    const TrainConfig config = o.train.resolve(start ? start->config : TrainConfig{});
    if (start) check_same_architecture(config, start->config);
    ctx.config = config;
    ctx.config_path = o.train.config_path;

    const Dataset source = load_dataset(o.source);
    std::optional<Dataset> eval;
    if (!o.eval_data.empty()) eval = load_dataset(o.eval_data);
    TrainState state = start ? std::move(start->state) : init_train_state(config, source.n_rois);
    TrainOutcome result;
    if (cmd == "pretrain") {
      result = pretrain(std::move(state), source, config, eval ? &*eval : nullptr);
    } else {
      const Dataset target = load_dataset(o.target).without_labels();
      result = adapt(std::move(state), source, target, config, eval ? &*eval : nullptr);
    }
    print_log(result.log);
    save_checkpoint(out.file("checkpoint.json"), config, result.state);
    write_run_log(out.file("runlog.jsonl"), result.log);
    write_json(out.file("config.json"), aufa::to_json(config));
  } else if (cmd == "eval" || cmd == "attn-top" || (cmd == "export-features" && o.mode == "encoded")) {
    require_input(o.data, "dataset manifest");
    if (o.checkpoint.empty()) throw Error(ErrorKind::InvalidConfig, cmd + " needs --checkpoint");
    require_input(o.checkpoint, "checkpoint");
    ctx.inputs["data"] = absolute_string(o.data);
    ctx.inputs["checkpoint"] = absolute_string(o.checkpoint);
    const LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
    const Dataset ds = load_dataset(o.data);
    if (cmd == "eval") {
      const Inference inf = infer(ck.state.model, ds);
      const MetricsReport r = evaluate_probs(inf.probs, ds.labels());
      write_json(out.file("metrics.json"), to_json(r));
      write_predictions(out.file("predictions.csv"), ds, inf.probs);
      std::cout << to_json(r).dump(2) << '\n';
    } else if (cmd == "attn-top") {
      const Inference inf = infer(ck.state.model, ds, true);
      const ConnectionRanking ranking = aggregate_attention(inf.maps);
      write_ranking_csv(out.file("attention_top.csv"), ranking, o.top_k);
      for (const auto& p : ranking.top(o.top_k)) std::cout << p.i << " - " << p.j << "  " << p.weight << '\n';
    } else {
      write_feature_csv(out.file("features.csv"), encoded_features(ck.state.model, ds));
    }
  } else if (cmd == "export-features") {
    if (o.mode != "raw") throw Error(ErrorKind::InvalidConfig, "--mode must be raw or encoded");
    require_input(o.data, "dataset manifest");
    ctx.inputs["data"] = absolute_string(o.data);
    write_feature_csv(out.file("features.csv"), raw_features(load_dataset(o.data)));
  } else if (cmd == "gradcheck") {
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < o.seeds; ++s) seeds.push_back(s);
    const auto cases = gradcheck_suite(seeds);
    double worst = 0.0;
    json rows = json::array();
    std::map<std::string, double> per_case;
    for (const auto& c : cases) {
      worst = std::max(worst, c.report.max_rel_error);
      per_case[c.name] = std::max(per_case[c.name], c.report.max_rel_error);
      rows.push_back({{"case", c.name},
                      {"max_rel_error", c.report.max_rel_error},
                      {"worst_param", c.report.worst_param},
                      {"entries", c.report.entries_checked}});
    }
    for (const auto& [name, err] : per_case) std::cout << std::left << std::setw(16) << name << err << '\n';
    std::cout << "max rel error " << worst << '\n';
    write_json(out.file("gradcheck.json"), {{"seeds", seeds}, {"max_rel_error", worst}, {"cases", rows}});
    write_manifest(out, ctx);
    out.commit();
    return worst <= 1e-4 ? 0 : kExitRuntime;
  } else if (cmd == "ablate") {
    require_input(o.source, "source manifest");
    require_input(o.target, "target manifest");
    ctx.inputs["source"] = absolute_string(o.source);
    ctx.inputs["target"] = absolute_string(o.target);
    const TrainConfig config = o.train.resolve(TrainConfig{});
    ctx.config = config;
    ctx.config_path = o.train.config_path;
    const Dataset source = load_dataset(o.source);
    const Dataset target = load_dataset(o.target);
    if (!target.fully_labeled()) throw Error(ErrorKind::MissingLabel, "ablate scores the target and needs its labels");

    std::ofstream csv(out.file("ablation.csv"), std::ios::binary);
    csv << "variant,seed,accuracy,precision,recall,f1,auc\n";
    std::map<std::string, std::vector<double>> acc;
    std::vector<std::string> order;
    for (std::size_t k = 0; k < o.seeds; ++k) {
      TrainConfig c = config;
      c.seed = config.seed + k;
      for (const auto& row : run_ablation(source, target, c)) {
        const MetricsReport& m = row.metrics;
        csv << row.variant << ',' << c.seed << ',' << format_double(m.accuracy) << ',' << format_double(m.precision)
            << ',' << format_double(m.recall) << ',' << format_double(m.f1) << ','
            << (m.auc ? format_double(*m.auc) : "") << '\n';
        if (!acc.count(row.variant)) order.push_back(row.variant);
        acc[row.variant].push_back(m.accuracy);
        std::cout << "seed " << c.seed << "  " << std::left << std::setw(14) << row.variant << " acc "
                  << m.accuracy << "  (" << std::fixed << std::setprecision(1) << row.seconds << " s)\n"
                  << std::defaultfloat << std::setprecision(6);
      }
    }
    std::ofstream summary(out.file("ablation_summary.csv"), std::ios::binary);
    summary << "variant,mean_accuracy,std_accuracy,n_seeds\n";
    std::cout << "\nvariant         mean acc   std\n";
    for (const auto& v : order) {
      const auto& xs = acc[v];
      double mean = 0.0, var = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      for (double x : xs) var += (x - mean) * (x - mean);
      const double sd = std::sqrt(var / static_cast<double>(xs.size()));
      summary << v << ',' << format_double(mean) << ',' << format_double(sd) << ',' << xs.size() << '\n';
      std::cout << std::left << std::setw(16) << v << std::setw(11) << mean << sd << '\n';
    }
  } else {
    std::cerr << app.help();
    return kExitUsage;
  }

  write_manifest(out, ctx);
  out.commit();
  std::cout << "outputs in " << out.final_path().string() << '\n';
  return 0;
}

int execute(const std::vector<std::string>& argv_in) {
  CLI::App app{"Attention-based unsupervised domain adaptation for connectivity classification"};
  app.require_subcommand(1);
  Options o;
  app.add_flag("--serial", o.serial, "single-threaded, fully deterministic execution");
  app.add_option("-o,--out", o.out_dir, std::string("output directory (default $") + kOutEnv + " or aufa_out)");
  app.add_flag("--overwrite", o.overwrite, "replace an existing output directory");

  auto* synth = app.add_subcommand("synth", "generate paired source/target sites");
  synth->add_option("--spec", o.spec_path, "JSON {\"source\": SiteSpec, \"target\": SiteSpec}")
      ->check(CLI::ExistingFile);
  o.src_spec.site_id = "source";
  o.tgt_spec.site_id = "target";
  o.tgt_spec.seed = 1;
  o.tgt_spec.shift_rotation_strength = kDefaultShiftRotation;
  o.tgt_spec.shift_offset_strength = kDefaultShiftOffset;
  synth->add_option("--n-per-class", o.src_spec.n_subjects_per_class, "source subjects per class");
  synth->add_option("--target-n-per-class", o.tgt_spec.n_subjects_per_class);
  synth->add_option("--separation", o.src_spec.class_separation);
  synth->add_option("--rotation", o.tgt_spec.shift_rotation_strength, "target mixing rotation strength");
  synth->add_option("--offset", o.tgt_spec.shift_offset_strength, "target nuisance-signal strength");
  synth->add_option("--seed", o.src_spec.seed, "source seed (also seeds the class templates)");
  synth->add_option("--target-seed", o.tgt_spec.seed);
  std::size_t n_rois = o.src_spec.n_rois, length = o.src_spec.series_length;
  double noise = o.src_spec.noise_std;
  synth->add_option("--n-rois", n_rois);
  synth->add_option("--length", length, "time points per series");
  synth->add_option("--noise", noise);
  synth->add_flag("--series", o.emit_series, "also write the raw time series");

  auto* fcn = app.add_subcommand("fcn", "time-series CSVs to connectivity matrices");
  fcn->add_option("--manifest", o.manifest, "dataset manifest with time-series entries");
  fcn->add_option("files", o.series_files, "time-series CSV files (rows = time points)");

  auto* pre = app.add_subcommand("pretrain", "stage 1: supervised training on the source site");
  pre->add_option("--source", o.source, "source dataset manifest")->required();
  pre->add_option("--checkpoint", o.checkpoint, "continue from this checkpoint");
  pre->add_option("--eval", o.eval_data, "labeled dataset scored after each epoch (never trained on)");
  o.train.add_to(pre);

  auto* ada = app.add_subcommand("adapt", "stage 2: joint adaptation to the unlabeled target");
  ada->add_option("--source", o.source)->required();
  ada->add_option("--target", o.target, "target manifest; labels are ignored")->required();
  ada->add_option("--checkpoint", o.checkpoint, "pretrained checkpoint");
  ada->add_option("--eval", o.eval_data, "labeled dataset scored after each epoch (never trained on)");
  o.train.add_to(ada);

  auto* ev = app.add_subcommand("eval", "metrics on a labeled dataset");
  ev->add_option("--data", o.data)->required();
  ev->add_option("--checkpoint", o.checkpoint);

  auto* attn = app.add_subcommand("attn-top", "rank connections by mean attention");
  attn->add_option("--data", o.data)->required();
  attn->add_option("--checkpoint", o.checkpoint);
  attn->add_option("--top", o.top_k, "number of connections (default 10)");

  auto* exp = app.add_subcommand("export-features", "feature table for external embedding");
  exp->add_option("--data", o.data)->required();
  exp->add_option("--mode", o.mode, "raw (upper triangle) or encoded")->check(CLI::IsMember({"raw", "encoded"}));
  exp->add_option("--checkpoint", o.checkpoint, "required in encoded mode");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seeds", o.seeds, "number of seeds (default 5)");

  auto* abl = app.add_subcommand("ablate", "pretrain-only, AUFA-C, AUFA-AUG, AUFA-MMD and AUFA on one split");
  abl->add_option("--source", o.source)->required();
  abl->add_option("--target", o.target, "labeled target; labels are used for scoring only")->required();
  abl->add_option("--seeds", o.seeds, "consecutive seeds from the config seed (default 5)");
  o.train.add_to(abl);

  auto* rr = app.add_subcommand("rerun", "replay a run from its run_manifest.json (always serial)");
  rr->add_option("manifest", o.manifest)->required()->check(CLI::ExistingFile);

  std::vector<std::string> rev(argv_in.rbegin(), argv_in.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }
  o.src_spec.n_rois = o.tgt_spec.n_rois = n_rois;
  o.src_spec.series_length = o.tgt_spec.series_length = length;
  o.src_spec.noise_std = o.tgt_spec.noise_std = noise;
  o.tgt_spec.class_separation = o.src_spec.class_separation;

  RunContext ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  ctx.serial = o.serial;
  // Everything after the global options belongs to the subcommand.
  auto it = std::find(argv_in.begin() + 1, argv_in.end(), ctx.command);
  ctx.args.assign(it, argv_in.end());

  if (o.serial) {
    kernels::set_serial(true);
    omp_set_num_threads(1);
  }
  try {
    return run_command(app, o, ctx);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return e.kind() == ErrorKind::InvalidConfig ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) { return execute(std::vector<std::string>(argv, argv + argc)); }
