#include "mrsv/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "mrsv/checkpoint.hpp"

namespace mrsv {

namespace {

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " is not set");
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

std::optional<ClipPool> load_pool(const std::filesystem::path& manifest_path) {
  if (manifest_path.empty()) return std::nullopt;
  const Manifest m = Manifest::read_csv(manifest_path);
  ClipPool pool;
  for (const auto& e : m.entries()) pool.clips.push_back(m.load(e));
  if (pool.clips.empty()) throw ConfigError("empty clip manifest " + manifest_path.string());
  return pool;
}

std::uint64_t tensor_checksum(const nn::TensorList& list, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const auto& t : list) h = checksum(t.tensor.data(), h);
  return h;
}

// The checkpoint must come from the same variant and PTM as the config.
void check_compatible(const SystemConfig& cfg, const Checkpoint& ckpt) {
  const nlohmann::json& c = ckpt.config;
  if (!c.is_object()) return;
  if (c.contains("variant") && c["variant"] != cfg.variant.name)
    throw ConfigError("incompatible checkpoint: trained as variant " + c["variant"].dump() +
                ", config selects " + cfg.variant.name);
  if (c.contains("ptm")) {
    const nlohmann::json mine = cfg.to_json()["ptm"];
    const nlohmann::json& theirs = c["ptm"];
    for (const char* key : {"kind", "num_layers", "dim", "seed"})
      if (theirs.contains(key) && mine.contains(key) && theirs[key] != mine[key])
        throw ConfigError(std::string("incompatible checkpoint: ptm.") + key + " differs");
  }
}

struct LoadedModel {
  std::shared_ptr<PtmProvider> ptm;
  std::unique_ptr<SpeakerModel> model;
};

LoadedModel load_trained(const SystemConfig& cfg, const std::filesystem::path& checkpoint) {
  require_file(checkpoint, "checkpoint");
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  check_compatible(cfg, ckpt);
  LoadedModel m;
  m.ptm = make_provider(cfg.ptm);
  m.model = build_model(cfg, m.ptm);
  load_model_state(*m.model, ckpt);
  return m;
}

Embedder embedder_for(const SpeakerModel& model) {
  return [&model](const AudioSegment& seg) { return model.embed(seg); };
}

void check_cohort_size(const SystemConfig& cfg, const Manifest& train) {
  const auto speakers = utterances_by_speaker(train).size();
  if (cfg.eval.as_norm.cohort_size > static_cast<int>(speakers))
    throw ConfigError("eval.as_norm.cohort_size " + std::to_string(cfg.eval.as_norm.cohort_size) +
                      " exceeds the " + std::to_string(speakers) + " training speakers");
}

std::optional<Cohort> cohort_for(const SystemConfig& cfg, bool as_norm,
                                 const Embedder& embedder) {
  if (!as_norm) return std::nullopt;
  if (cfg.eval.as_norm.cohort_size <= 0)
    throw ConfigError("--as-norm needs eval.as_norm.cohort_size > 0 in the config");
  require_file(cfg.data.train_manifest, "data.train_manifest (AS-norm cohort source)");
  const Manifest train = Manifest::read_csv(cfg.data.train_manifest);
  check_cohort_size(cfg, train);
  CohortConfig cc;
  cc.size = cfg.eval.as_norm.cohort_size;
  cc.utterances_per_speaker = cfg.eval.as_norm.utterances_per_speaker;
  cc.seed = cfg.seed;
  return build_cohort(utterances_by_speaker(train), manifest_source(train), embedder, cc);
}

}  // namespace

SystemConfig resolve_config(const std::filesystem::path& path, const CommonArgs& common) {
  SystemConfig cfg = load_config(path);
  if (common.seed) cfg.seed = *common.seed;
  if (common.deterministic) cfg.eval.threads = 1;
  cfg.validate();
  return cfg;
}

nlohmann::json model_checksums(const SpeakerModel& model) {
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [name, list] : model.parameter_groups()) groups[name] = hex64(tensor_checksum(list));
  return {{"ptm", hex64(model.ptm().checksum())}, {"groups", groups}};
}

nlohmann::json layer_weights(const SpeakerModel& model) {
  if (!model.fusion()) return nullptr;
  return model.fusion()->normalized_values();
}

nlohmann::json cmd_train(const TrainArgs& args) {
  SystemConfig cfg = resolve_config(args.config, args.common);
  if (args.output_dir) cfg.output_dir = *args.output_dir;

  // Every input is checked before anything is built.
  require_file(cfg.data.train_manifest, "data.train_manifest");
  if (!cfg.augment.noise_manifest.empty()) require_file(cfg.augment.noise_manifest, "augment.noise_manifest");
  if (!cfg.augment.rir_manifest.empty()) require_file(cfg.augment.rir_manifest, "augment.rir_manifest");
  const bool evaluate = !cfg.data.eval_manifest.empty() || !cfg.data.trials.empty();
  if (evaluate) {
    require_file(cfg.data.eval_manifest, "data.eval_manifest");
    require_file(cfg.data.trials, "data.trials");
  }
  if (cfg.ptm.kind == "checkpoint") require_file(cfg.ptm.path, "ptm.path");
  const Manifest train = Manifest::read_csv(cfg.data.train_manifest);
  if (train.empty()) throw ConfigError("training manifest is empty");
  if (evaluate) check_cohort_size(cfg, train);

  AugmentPolicy policy;
  policy.speed_factors = cfg.augment.speed_factors;
  policy.noise = load_pool(cfg.augment.noise_manifest);
  policy.rir = load_pool(cfg.augment.rir_manifest);
  policy.snr_low_db = cfg.augment.snr_low_db;
  policy.snr_high_db = cfg.augment.snr_high_db;

  const auto ptm = make_provider(cfg.ptm);
  const auto model = build_model(cfg, ptm);

  std::filesystem::create_directories(cfg.output_dir);
  const nlohmann::json snapshot = cfg.to_json();
  open_out(cfg.output_dir / "config.json") << snapshot.dump(2) << '\n';

  TrainOptions opt;
  opt.batch_size = cfg.batch_size;
  opt.steps_per_epoch = cfg.steps_per_epoch;
  opt.crop_seconds = cfg.data.crop_seconds;
  opt.schedule = cfg.schedule;
  opt.loss = cfg.loss;
  opt.optimizer = cfg.optimizer;
  opt.augment = std::move(policy);
  opt.speed_as_new_class = cfg.augment.speed_as_new_class;
  opt.seed = cfg.seed;
  opt.max_steps = args.max_steps;
  opt.output_dir = cfg.output_dir;
  opt.config_snapshot = snapshot;

  const nlohmann::json initial = model_checksums(*model);
  Trainer trainer(*model, opt);
  const TrainResult result = trainer.run(TrainingSet::from_manifest(train));
  const auto final_path = cfg.output_dir / "final.ckpt";
  trainer.save_checkpoint(final_path);

  nlohmann::json report;
  report["config"] = snapshot;
  report["steps"] = trainer.steps_taken();
  report["final_loss"] = result.log.empty() ? nlohmann::json(nullptr) : nlohmann::json(result.log.back().loss);
  report["layer_weights"] = layer_weights(*model);
  report["checksums"] = {{"initial", initial}, {"final", model_checksums(*model)}};
  nlohmann::json ckpts = nlohmann::json::array();
  for (const auto& p : result.checkpoints) ckpts.push_back(p.filename().string());
  ckpts.push_back(final_path.filename().string());
  report["checkpoints"] = ckpts;

  if (evaluate) {
    const Manifest eval = Manifest::read_csv(cfg.data.eval_manifest);
    const TrialList trials = parse_trials(cfg.data.trials);
    check_trials_resolvable(trials, eval);
    const Embedder embedder = embedder_for(*model);
    const auto cohort = cohort_for(cfg, cfg.eval.as_norm.cohort_size > 0, embedder);
    ScoringOptions so;
    so.cohort = cohort ? &*cohort : nullptr;
    so.top_k = cfg.eval.as_norm.top_k;
    so.threads = cfg.eval.threads;
    const auto rows = short_segment_eval(trials, manifest_source(eval), embedder,
                                         DurationGrid::parse(cfg.eval.durations), cfg.eval.dcf, so);
    auto csv = open_out(cfg.output_dir / "metrics.csv");
    write_metrics_csv(csv, rows);
    nlohmann::json table = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row{{"duration", r.duration}, {"eer", r.eer}, {"min_dcf", r.min_dcf}};
      if (r.eer_norm) row["eer_asnorm"] = *r.eer_norm;
      if (r.min_dcf_norm) row["min_dcf_asnorm"] = *r.min_dcf_norm;
      table.push_back(row);
    }
    report["metrics"] = table;
  } else {
    report["metrics"] = nullptr;
  }
  open_out(cfg.output_dir / "report.json") << report.dump(2) << '\n';
  return report;
}

std::vector<MetricsRow> cmd_evaluate(const EvaluateArgs& args, std::ostream& csv) {
  SystemConfig cfg = resolve_config(args.config, args.common);
  if (args.trials) cfg.data.trials = *args.trials;
  if (args.durations) cfg.eval.durations = *args.durations;
  const DurationGrid grid = DurationGrid::parse(cfg.eval.durations);
  if (args.as_norm && cfg.eval.as_norm.cohort_size <= 0)
    throw ConfigError("--as-norm needs eval.as_norm.cohort_size > 0 in the config");
  require_file(cfg.data.eval_manifest, "data.eval_manifest");
  require_file(cfg.data.trials, "trials");

  const Manifest eval = Manifest::read_csv(cfg.data.eval_manifest);
  const TrialList trials = parse_trials(cfg.data.trials);
  check_trials_resolvable(trials, eval);
  const LoadedModel m = load_trained(cfg, args.checkpoint);
  const Embedder embedder = embedder_for(*m.model);
  const auto cohort = cohort_for(cfg, args.as_norm, embedder);
  ScoringOptions so;
  so.cohort = cohort ? &*cohort : nullptr;
  so.top_k = cfg.eval.as_norm.top_k;
  so.threads = cfg.eval.threads;
  const auto rows = short_segment_eval(trials, manifest_source(eval), embedder, grid, cfg.eval.dcf, so);
  write_metrics_csv(csv, rows);
  return rows;
}

ScoreSet cmd_score(const ScoreArgs& args, std::ostream& out) {
  SystemConfig cfg;
  if (args.config) {
    cfg = resolve_config(*args.config, args.common);
  } else {
    require_file(args.checkpoint, "checkpoint");
    cfg = SystemConfig::from_json(read_checkpoint(args.checkpoint).config);
    if (args.common.seed) cfg.seed = *args.common.seed;
    if (args.common.deterministic) cfg.eval.threads = 1;
    cfg.validate();
  }
  require_file(args.trials, "trials");
  require_file(args.manifest, "manifest");
  const Manifest manifest = Manifest::read_csv(args.manifest);
  const TrialList trials = parse_trials(args.trials);
  check_trials_resolvable(trials, manifest);

  const LoadedModel m = load_trained(cfg, args.checkpoint);
  const Embedder embedder = embedder_for(*m.model);
  const auto cohort = cohort_for(cfg, args.as_norm, embedder);
  ScoringOptions so;
  so.cohort = cohort ? &*cohort : nullptr;
  so.top_k = cfg.eval.as_norm.top_k;
  so.threads = cfg.eval.threads;
  ScoreSet scores = score_trials(trials, manifest_source(manifest), embedder, 0.0, 0.0, so);
  write_score_file(out, scores);
  return scores;
}

std::vector<std::vector<double>> cmd_export_weights(const ExportArgs& args, std::ostream& csv) {
  if (args.checkpoints.empty()) throw ConfigError("export-weights: no checkpoint given");
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  for (const auto& path : args.checkpoints) {
    require_file(path, "checkpoint");
    const Checkpoint ckpt = read_checkpoint(path);
    const nn::Tensor* raw = ckpt.find(kGroupFusion, "fusion.raw");
    std::string name = path.stem().string();
    if (ckpt.config.is_object() && ckpt.config.contains("variant"))
      name = ckpt.config["variant"].get<std::string>() + ":" + name;
    if (!raw) throw Error("export-weights: " + path.string() + " has no PTM branch (" + name + ")");
    FusionWeights w(raw->dim(0));
    std::copy(raw->data().begin(), raw->data().end(), w.raw.mutable_data().begin());
    names.push_back(name);
    columns.push_back(w.normalized_values());
  }
  for (std::size_t i = 1; i < columns.size(); ++i)
    if (columns[i].size() != columns[0].size())
      throw Error("export-weights: checkpoints disagree on the number of layers");
  write_layer_weights_csv(csv, names, columns);
  if (args.plot) write_weights_svg(*args.plot, names, columns);
  return columns;
}

void write_weights_svg(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& columns) {
  static const char* colours[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"};
  const std::size_t layers = columns.empty() ? 0 : columns[0].size();
  double top = 0.0;
  for (const auto& c : columns) for (double v : c) top = std::max(top, v);
  if (top <= 0.0) top = 1.0;
  const double w = 640, h = 320, left = 50, bottom = 30, plot_h = h - bottom - 40;
  const double group_w = (w - left - 10) / std::max<std::size_t>(layers, 1);
  const double bar_w = group_w * 0.8 / std::max<std::size_t>(columns.size(), 1);

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - 10 << "\" y2=\""
      << h - bottom << "\" stroke=\"black\"/>\n";
  out << "<text x=\"5\" y=\"45\" font-size=\"11\">" << top << "</text>\n";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const char* colour = colours[c % std::size(colours)];
    for (std::size_t l = 0; l < layers; ++l) {
      const double bh = plot_h * columns[c][l] / top;
      const double x = left + l * group_w + group_w * 0.1 + c * bar_w;
      out << "<rect x=\"" << x << "\" y=\"" << h - bottom - bh << "\" width=\"" << bar_w
          << "\" height=\"" << bh << "\" fill=\"" << colour << "\"/>\n";
    }
    out << "<text x=\"" << left + 120 * c << "\" y=\"15\" font-size=\"12\" fill=\"" << colour
        << "\">" << names[c] << "</text>\n";
  }
  for (std::size_t l = 0; l < layers; ++l)
    out << "<text x=\"" << left + l * group_w + group_w * 0.4 << "\" y=\"" << h - 10
        << "\" font-size=\"11\">" << l << "</text>\n";
  out << "</svg>\n";
}

}  // namespace mrsv
