#include "mrsv/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace mrsv {

namespace {

using nlohmann::json;

// One JSON object being read; remembers which keys were used so leftovers
// can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config " + path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config " + where(key) + ": wrong type");
    }
  }

  void path(const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
    std::string s = out.string();
    get(key, s);
    out = s;
    if (!out.empty() && out.is_relative() && !base.empty()) out = base / out;
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + where(item.key()));
  }

 private:
  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

SystemConfig SystemConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  SystemConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  std::string variant = c.variant.name;
  root.get("variant", variant);
  c.variant = VariantSpec::from_name(variant);
  std::string integration = to_string(c.integration);
  root.get("integration", integration);
  c.integration = parse_integration_mode(integration);
  root.path("output_dir", c.output_dir, base_dir);

  {
    Section s = root.sub("ptm");
    s.get("kind", c.ptm.kind);
    s.get("num_layers", c.ptm.stub.num_layers);
    s.get("dim", c.ptm.stub.dim);
    s.get("seed", c.ptm.stub.seed);
    s.path("path", c.ptm.path, base_dir);
    s.finish();
  }
  {
    Section s = root.sub("mre");
    s.get("shifts", c.mre.shifts);
    s.get("frame_shift", c.mre.frame_shift);
    s.get("encoder_kernels", c.mre.encoder_kernels);
    s.get("tcn_channels", c.mre.tcn_channels);
    s.get("out_channels", c.mre.out_channels);
    s.get("tcn_blocks", c.mre.tcn_blocks);
    s.get("tcn_kernel", c.mre.tcn_kernel);
    s.get("tcn_dilations", c.mre.tcn_dilations);
    s.finish();
  }
  {
    Section s = root.sub("backbone");
    s.get("channels", c.backbone.channels);
    s.get("embedding_dim", c.backbone.embedding_dim);
    s.get("num_blocks", c.backbone.num_blocks);
    s.get("dilations", c.backbone.dilations);
    s.get("kernel", c.backbone.kernel);
    s.get("res2_scale", c.backbone.res2_scale);
    s.get("se_channels", c.backbone.se_channels);
    s.get("attention_channels", c.backbone.attention_channels);
    s.finish();
  }
  {
    Section s = root.sub("loss");
    s.get("margin", c.loss.margin);
    s.get("scale", c.loss.scale);
    s.get("num_classes", c.loss.num_classes);
    s.finish();
  }
  {
    Section s = root.sub("schedule");
    s.get("lr_max", c.schedule.lr_max);
    s.get("lr_min", c.schedule.lr_min);
    s.get("cycles", c.schedule.cycles);
    s.get("epochs_per_cycle", c.schedule.epochs_per_cycle);
    s.get("halve_per_cycle", c.schedule.halve_per_cycle);
    s.finish();
  }
  {
    Section s = root.sub("optimizer");
    s.get("beta1", c.optimizer.beta1);
    s.get("beta2", c.optimizer.beta2);
    s.get("eps", c.optimizer.eps);
    s.get("weight_decay", c.optimizer.weight_decay);
    s.get("batch_size", c.batch_size);
    s.get("steps_per_epoch", c.steps_per_epoch);
    s.finish();
  }
  {
    Section s = root.sub("data");
    s.path("train_manifest", c.data.train_manifest, base_dir);
    s.path("eval_manifest", c.data.eval_manifest, base_dir);
    s.path("trials", c.data.trials, base_dir);
    s.get("crop_seconds", c.data.crop_seconds);
    s.finish();
  }
  {
    Section s = root.sub("augment");
    s.get("speed_factors", c.augment.speed_factors);
    s.path("noise_manifest", c.augment.noise_manifest, base_dir);
    s.path("rir_manifest", c.augment.rir_manifest, base_dir);
    s.get("snr_low_db", c.augment.snr_low_db);
    s.get("snr_high_db", c.augment.snr_high_db);
    s.get("speed_as_new_class", c.augment.speed_as_new_class);
    s.finish();
  }
  {
    Section s = root.sub("eval");
    s.get("p_target", c.eval.dcf.p_target);
    s.get("c_fa", c.eval.dcf.c_fa);
    s.get("c_miss", c.eval.dcf.c_miss);
    s.get("durations", c.eval.durations);
    s.get("threads", c.eval.threads);
    Section a = s.sub("as_norm");
    a.get("cohort_size", c.eval.as_norm.cohort_size);
    a.get("top_k", c.eval.as_norm.top_k);
    a.get("utterances_per_speaker", c.eval.as_norm.utterances_per_speaker);
    a.finish();
    s.finish();
  }
  root.finish();
  return c;
}

json SystemConfig::to_json() const {
  json ptm_j = {{"kind", ptm.kind}};
  if (ptm.kind == "stub") {
    ptm_j["num_layers"] = ptm.stub.num_layers;
    ptm_j["dim"] = ptm.stub.dim;
    ptm_j["seed"] = ptm.stub.seed;
  } else {
    ptm_j["path"] = ptm.path.string();
  }
  return {
      {"seed", seed},
      {"variant", variant.name},
      {"integration", to_string(integration)},
      {"output_dir", output_dir.string()},
      {"ptm", ptm_j},
      {"mre",
       {{"shifts", mre.shifts},
        {"frame_shift", mre.frame_shift},
        {"encoder_kernels", mre.encoder_kernels},
        {"tcn_channels", mre.tcn_channels},
        {"out_channels", mre.out_channels},
        {"tcn_blocks", mre.tcn_blocks},
        {"tcn_kernel", mre.tcn_kernel},
        {"tcn_dilations", mre.tcn_dilations}}},
      {"backbone",
       {{"channels", backbone.channels},
        {"embedding_dim", backbone.embedding_dim},
        {"num_blocks", backbone.num_blocks},
        {"dilations", backbone.dilations},
        {"kernel", backbone.kernel},
        {"res2_scale", backbone.res2_scale},
        {"se_channels", backbone.se_channels},
        {"attention_channels", backbone.attention_channels}}},
      {"loss", {{"margin", loss.margin}, {"scale", loss.scale}, {"num_classes", loss.num_classes}}},
      {"schedule",
       {{"lr_max", schedule.lr_max},
        {"lr_min", schedule.lr_min},
        {"cycles", schedule.cycles},
        {"epochs_per_cycle", schedule.epochs_per_cycle},
        {"halve_per_cycle", schedule.halve_per_cycle}}},
      {"optimizer",
       {{"beta1", optimizer.beta1},
        {"beta2", optimizer.beta2},
        {"eps", optimizer.eps},
        {"weight_decay", optimizer.weight_decay},
        {"batch_size", batch_size},
        {"steps_per_epoch", steps_per_epoch}}},
      {"data",
       {{"train_manifest", data.train_manifest.string()},
        {"eval_manifest", data.eval_manifest.string()},
        {"trials", data.trials.string()},
        {"crop_seconds", data.crop_seconds}}},
      {"augment",
       {{"speed_factors", augment.speed_factors},
        {"noise_manifest", augment.noise_manifest.string()},
        {"rir_manifest", augment.rir_manifest.string()},
        {"snr_low_db", augment.snr_low_db},
        {"snr_high_db", augment.snr_high_db},
        {"speed_as_new_class", augment.speed_as_new_class}}},
      {"eval",
       {{"p_target", eval.dcf.p_target},
        {"c_fa", eval.dcf.c_fa},
        {"c_miss", eval.dcf.c_miss},
        {"durations", eval.durations},
        {"threads", eval.threads},
        {"as_norm",
         {{"cohort_size", eval.as_norm.cohort_size},
          {"top_k", eval.as_norm.top_k},
          {"utterances_per_speaker", eval.as_norm.utterances_per_speaker}}}}},
  };
}

void SystemConfig::validate() const {
  variant.validate();
  if (ptm.kind == "stub") {
    if (ptm.stub.num_layers < 0 || ptm.stub.dim <= 0)
      throw ConfigError("ptm: stub needs num_layers >= 0 and dim > 0");
  } else if (ptm.kind == "checkpoint") {
    if (ptm.path.empty()) throw ConfigError("ptm: checkpoint kind needs a path");
  } else {
    throw ConfigError("ptm: unknown kind '" + ptm.kind + "' (stub|checkpoint)");
  }

  const MREConfig m = validate_config(mre);
  BackboneConfig b = backbone;
  b.input_dim = ptm.kind == "stub" ? ptm.stub.dim : 1;
  b.adapter_enabled = variant.use_mre;
  b.cond_dim = m.output_channels();
  b.validate();
  loss.validate();
  schedule.validate();
  eval.dcf.validate();
  DurationGrid::parse(eval.durations);

  if (batch_size < 1) throw ConfigError("optimizer: batch_size must be >= 1");
  if (steps_per_epoch < 0) throw ConfigError("optimizer: steps_per_epoch must be >= 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (!(data.crop_seconds > 0.0)) throw ConfigError("data: crop_seconds must be positive");
  auto crop = static_cast<std::size_t>(std::lround(data.crop_seconds * kSampleRate));
  if (variant.use_mre) crop -= crop % m.frame_shift;
  if (crop < static_cast<std::size_t>(StubPtm::kKernel))
    throw ConfigError("data: crop_seconds leaves fewer samples than the PTM receptive field");

  for (double f : augment.speed_factors)
    if (!(f > 0.0)) throw ConfigError("augment: speed factors must be positive");
  if (!(augment.snr_low_db <= augment.snr_high_db))
    throw ConfigError("augment: snr_low_db must not exceed snr_high_db");

  if (eval.threads < 1) throw ConfigError("eval: threads must be >= 1");
  if (eval.as_norm.cohort_size < 0) throw ConfigError("eval.as_norm: cohort_size must be >= 0");
  if (eval.as_norm.cohort_size > 0 &&
      (eval.as_norm.top_k < 2 || eval.as_norm.top_k > eval.as_norm.cohort_size))
    throw ConfigError("eval.as_norm: top_k must lie in [2, cohort_size]");
  if (eval.as_norm.utterances_per_speaker < 0)
    throw ConfigError("eval.as_norm: utterances_per_speaker must be >= 0");
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
}

SystemConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return SystemConfig::from_json(j, path.parent_path());
}

std::shared_ptr<PtmProvider> make_provider(const PtmSource& src) {
  if (src.kind == "stub") return std::make_shared<StubPtm>(src.stub);
  if (src.kind == "checkpoint") return checkpoint_shim(src.path);
  throw ConfigError("ptm: unknown kind '" + src.kind + "'");
}

ModelConfig model_config(const SystemConfig& cfg) {
  ModelConfig m;
  m.variant = cfg.variant;
  m.mre = cfg.mre;
  m.backbone = cfg.backbone;
  m.integration = cfg.integration;
  m.seed = cfg.seed;
  return m;
}

std::unique_ptr<SpeakerModel> build_model(const SystemConfig& cfg,
                                          std::shared_ptr<const PtmProvider> ptm) {
  return build_variant(cfg.variant, model_config(cfg), std::move(ptm));
}

}  // namespace mrsv
