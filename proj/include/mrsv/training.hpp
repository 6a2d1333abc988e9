// AAM-softmax objective, cyclical learning rate and the training loop.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrsv/audio.hpp"
#include "mrsv/dataset.hpp"
#include "mrsv/model.hpp"
#include "mrsv/nn/optim.hpp"

namespace mrsv {

struct LossConfig {
  double margin = 0.2;
  double scale = 30.0;
  int num_classes = 0;  // 0: taken from the training set
  void validate() const;
};

// Mean over the batch of cross-entropy on logits s*cos(theta_j), with the
// target logit replaced by s*cos(theta_y + m).  embeddings: [B, E],
// class_weights: [K, E].
nn::Tensor aam_softmax_loss(const nn::Tensor& embeddings, const nn::Tensor& class_weights,
                            const std::vector<int>& labels, const LossConfig& cfg);

class AamSoftmaxHead {
 public:
  AamSoftmaxHead() = default;
  AamSoftmaxHead(int num_classes, int embedding_dim, Rng& rng);
  nn::Tensor loss(const nn::Tensor& embeddings, const std::vector<int>& labels,
                  const LossConfig& cfg) const {
    return aam_softmax_loss(embeddings, weight, labels, cfg);
  }
  int num_classes() const { return weight.dim(0); }
  nn::Tensor weight;
};

struct ScheduleConfig {
  double lr_max = 1e-3;
  double lr_min = 1e-8;
  int cycles = 6;
  int epochs_per_cycle = 5;
  bool halve_per_cycle = true;
  void validate() const;
  int total_epochs() const { return cycles * epochs_per_cycle; }
};

// Triangular cycles from lr_min up to lr_max / 2^k (k = cycle index when
// halving) and back; lr_min once every cycle has finished.
double lr_at(long step, long steps_per_cycle, const ScheduleConfig& cfg);

// Utterances with class labels; load(i) may hit the disk each time.
struct TrainingSet {
  std::size_t size = 0;
  std::vector<int> labels;
  int num_speakers = 0;
  std::function<AudioSegment(std::size_t)> load;

  static TrainingSet from_manifest(const Manifest& manifest);
  static TrainingSet from_segments(std::vector<AudioSegment> segments, std::vector<int> labels);
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainOptions {
  int batch_size = 32;
  long steps_per_epoch = 0;  // 0: ceil(size / batch_size)
  double crop_seconds = 2.0;
  ScheduleConfig schedule;
  LossConfig loss;
  nn::AdamWOptions optimizer;
  AugmentPolicy augment;
  bool speed_as_new_class = false;
  std::uint64_t seed = 0;
  long max_steps = -1;  // stop early, e.g. for smoke runs
  // When set: metrics.jsonl and epoch{N}.ckpt are written here.
  std::filesystem::path output_dir;
  nlohmann::json config_snapshot;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> log;
  std::vector<std::filesystem::path> checkpoints;
  std::uint64_t ptm_checksum = 0;
};

class Trainer {
 public:
  Trainer(SpeakerModel& model, TrainOptions opt);

  TrainResult run(const TrainingSet& data);
  // One optimizer step on an explicit batch; returns the loss.
  double step(const std::vector<AudioSegment>& batch, const std::vector<int>& labels, double lr);

  const AamSoftmaxHead& head() const { return head_; }
  long steps_taken() const { return steps_; }
  // Writes a checkpoint after confirming the frozen PTM is untouched.
  void save_checkpoint(const std::filesystem::path& path) const;

 private:
  void ensure_head(int num_classes);

  SpeakerModel& model_;
  TrainOptions opt_;
  AamSoftmaxHead head_;
  std::unique_ptr<nn::AdamW> optim_;
  std::uint64_t ptm_checksum_;
  long steps_ = 0;
};

}  // namespace mrsv
