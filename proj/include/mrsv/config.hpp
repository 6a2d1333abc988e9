// Run configuration: one JSON document with explicit defaults for every
// field.  Unknown keys are rejected so typos fail loudly.
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrsv/evaluation.hpp"
#include "mrsv/model.hpp"
#include "mrsv/training.hpp"

namespace mrsv {

struct PtmSource {
  std::string kind = "stub";  // "stub" | "checkpoint"
  StubPtmConfig stub;
  std::filesystem::path path;
};

struct DataConfig {
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;
  std::filesystem::path trials;
  double crop_seconds = 2.0;
};

struct AugmentConfig {
  std::vector<double> speed_factors;
  std::filesystem::path noise_manifest;
  std::filesystem::path rir_manifest;
  double snr_low_db = 0.0;
  double snr_high_db = 15.0;
  bool speed_as_new_class = false;
};

struct AsNormSettings {
  int cohort_size = 0;  // 0: AS-norm not configured
  int top_k = 200;
  int utterances_per_speaker = 5;
};

struct EvalConfig {
  DCFConfig dcf;
  std::string durations = "full,5,4,3,2,1.5,1";
  AsNormSettings as_norm;
  int threads = 1;
};

struct SystemConfig {
  std::uint64_t seed = 0;
  VariantSpec variant = VariantSpec::from_name("S4");
  IntegrationMode integration = IntegrationMode::kPlainSum;
  PtmSource ptm;
  MREConfig mre;
  BackboneConfig backbone;
  LossConfig loss;
  ScheduleConfig schedule;
  nn::AdamWOptions optimizer;
  int batch_size = 32;
  long steps_per_epoch = 0;
  DataConfig data;
  AugmentConfig augment;
  EvalConfig eval;
  std::filesystem::path output_dir = "run";

  // Relative paths resolve against base_dir (normally the config's folder).
  static SystemConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;

  // Cross-field checks that every module would otherwise hit later; paths
  // are not touched here.
  void validate() const;
};

SystemConfig load_config(const std::filesystem::path& path);

std::shared_ptr<PtmProvider> make_provider(const PtmSource& src);
ModelConfig model_config(const SystemConfig& cfg);
std::unique_ptr<SpeakerModel> build_model(const SystemConfig& cfg,
                                          std::shared_ptr<const PtmProvider> ptm);

}  // namespace mrsv
