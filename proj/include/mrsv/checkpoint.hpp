// Versioned model container: "MRSVCKPT", u32 version, u64 config length,
// config JSON, u32 tensor count, then per tensor the group and name
// (u32-length-prefixed), u32 rank, i32 dims and float64 values.
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mrsv/nn/layers.hpp"

namespace mrsv {

class SpeakerModel;
class AamSoftmaxHead;

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kGroupBuffers = "buffers";
inline constexpr const char* kGroupClassifier = "classifier";

using GroupedTensors = std::vector<std::pair<std::string, nn::TensorList>>;

struct Checkpoint {
  nlohmann::json config;
  GroupedTensors groups;

  bool has_group(const std::string& group) const;
  const nn::Tensor* find(const std::string& group, const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                      const GroupedTensors& groups);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Model parameter groups plus BN buffers and, if given, the classifier.
GroupedTensors model_state(const SpeakerModel& model, const AamSoftmaxHead* head = nullptr);

// Copies values into the model's tensors.  Every model tensor must be
// present with the same shape; extra groups (e.g. the classifier) are
// ignored.
void load_model_state(const SpeakerModel& model, const Checkpoint& ckpt);

}  // namespace mrsv
