// Command implementations behind the mrsv tool.  Each returns its artifact
// in memory as well as writing it, so tests can drive them directly.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrsv/config.hpp"

namespace mrsv {

struct CommonArgs {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;  // serial execution everywhere
};

// Loads, applies overrides and validates; nothing else is touched.
SystemConfig resolve_config(const std::filesystem::path& path, const CommonArgs& common);

// Frozen-PTM checksum plus one checksum per trainable group.
nlohmann::json model_checksums(const SpeakerModel& model);
// Normalized fusion weights, or null when the variant has no PTM branch.
nlohmann::json layer_weights(const SpeakerModel& model);

struct TrainArgs {
  std::filesystem::path config;
  CommonArgs common;
  long max_steps = -1;
  std::optional<std::filesystem::path> output_dir;
};

// Writes config.json, metrics.jsonl, epoch checkpoints, final.ckpt,
// metrics.csv (when eval data is configured) and report.json into the
// output directory; returns the report.
nlohmann::json cmd_train(const TrainArgs& args);

struct EvaluateArgs {
  std::filesystem::path config;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> trials;  // overrides data.trials
  std::optional<std::string> durations;         // overrides eval.durations
  bool as_norm = false;
  CommonArgs common;
};

std::vector<MetricsRow> cmd_evaluate(const EvaluateArgs& args, std::ostream& csv);

struct ScoreArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path trials;
  std::filesystem::path manifest;
  // Without a config the snapshot stored in the checkpoint is used.
  std::optional<std::filesystem::path> config;
  bool as_norm = false;
  CommonArgs common;
};

ScoreSet cmd_score(const ScoreArgs& args, std::ostream& out);

struct ExportArgs {
  std::vector<std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> plot;  // SVG bar chart
};

// One column of normalized layer weights per checkpoint.
std::vector<std::vector<double>> cmd_export_weights(const ExportArgs& args, std::ostream& csv);

// Grouped bar chart, one colour per column.
void write_weights_svg(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& columns);

}  // namespace mrsv
