#include "mrsv/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>

#include "mrsv/checkpoint.hpp"

namespace mrsv {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr double kCosClamp = 1.0 - 1e-7;

// Row-wise L2 normalization of a [R, E] buffer; returns the norms.
std::vector<double> normalize_rows(std::span<const double> x, int rows, int cols,
                                   std::vector<double>& out) {
  out.assign(x.begin(), x.end());
  std::vector<double> norms(rows);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += x[r * cols + c] * x[r * cols + c];
    norms[r] = std::max(std::sqrt(s), kNormFloor);
    for (int c = 0; c < cols; ++c) out[r * cols + c] /= norms[r];
  }
  return norms;
}

// Gradient through y = x / |x| for each row, accumulated into grad.
void normalize_backward(const std::vector<double>& unit, const std::vector<double>& norms,
                        const std::vector<double>& g_unit, int rows, int cols,
                        std::vector<double>& grad) {
  for (int r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (int c = 0; c < cols; ++c) dot += unit[r * cols + c] * g_unit[r * cols + c];
    for (int c = 0; c < cols; ++c)
      grad[r * cols + c] += (g_unit[r * cols + c] - unit[r * cols + c] * dot) / norms[r];
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(margin >= 0.0 && margin < std::numbers::pi / 2))
    throw ConfigError("loss: margin must lie in [0, pi/2)");
  if (!(scale > 0.0)) throw ConfigError("loss: scale must be positive");
  if (num_classes < 0) throw ConfigError("loss: num_classes must be >= 0");
}

nn::Tensor aam_softmax_loss(const nn::Tensor& embeddings, const nn::Tensor& class_weights,
                            const std::vector<int>& labels, const LossConfig& cfg) {
  if (embeddings.rank() != 2 || class_weights.rank() != 2 ||
      embeddings.dim(1) != class_weights.dim(1))
    throw Error("aam softmax: expected [B, E] embeddings and [K, E] weights");
  const int b = embeddings.dim(0), e = embeddings.dim(1), k = class_weights.dim(0);
  if (static_cast<int>(labels.size()) != b) throw Error("aam softmax: one label per embedding");
  for (int y : labels)
    if (y < 0 || y >= k) throw Error("invalid label index " + std::to_string(y));

  auto en = std::make_shared<std::vector<double>>();
  auto wn = std::make_shared<std::vector<double>>();
  auto e_norm = std::make_shared<std::vector<double>>(normalize_rows(embeddings.data(), b, e, *en));
  auto w_norm =
      std::make_shared<std::vector<double>>(normalize_rows(class_weights.data(), k, e, *wn));

  // probs holds softmax(logits); dtarget the derivative of the target
  // logit w.r.t. its cosine.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * k);
  auto dtarget = std::make_shared<std::vector<double>>(b);
  const double s = cfg.scale, m = cfg.margin;
  double total = 0.0;
  std::vector<double> logits(k);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < k; ++j) {
      double c = 0.0;
      for (int d = 0; d < e; ++d) c += (*en)[i * e + d] * (*wn)[j * e + d];
      logits[j] = s * c;
    }
    const int y = labels[i];
    const double c = logits[y] / s;
    const double cc = std::clamp(c, -kCosClamp, kCosClamp);
    const double theta = std::acos(cc);
    logits[y] = s * std::cos(theta + m);
    (*dtarget)[i] = cc == c ? s * std::sin(theta + m) / std::sin(theta) : 0.0;

    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(logits[j] - mx);
    total += mx + std::log(z) - logits[y];
    for (int j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(logits[j] - mx) / z;
  }

  return nn::make_result(
      {1}, {total / b}, {embeddings, class_weights},
      [=](nn::Node& self) {
        const double g = self.grad[0] / b;
        std::vector<double> dcos(static_cast<std::size_t>(b) * k);
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < k; ++j) {
            const double dl = g * ((*probs)[i * k + j] - (j == labels[i] ? 1.0 : 0.0));
            dcos[i * k + j] = j == labels[i] ? dl * (*dtarget)[i] : dl * s;
          }
        if (self.parents[0]->requires_grad) {
          std::vector<double> g_unit(static_cast<std::size_t>(b) * e, 0.0);
          for (int i = 0; i < b; ++i)
            for (int j = 0; j < k; ++j)
              for (int d = 0; d < e; ++d) g_unit[i * e + d] += dcos[i * k + j] * (*wn)[j * e + d];
          self.parents[0]->ensure_grad();
          normalize_backward(*en, *e_norm, g_unit, b, e, self.parents[0]->grad);
        }
        if (self.parents[1]->requires_grad) {
          std::vector<double> g_unit(static_cast<std::size_t>(k) * e, 0.0);
          for (int i = 0; i < b; ++i)
            for (int j = 0; j < k; ++j)
              for (int d = 0; d < e; ++d) g_unit[j * e + d] += dcos[i * k + j] * (*en)[i * e + d];
          self.parents[1]->ensure_grad();
          normalize_backward(*wn, *w_norm, g_unit, k, e, self.parents[1]->grad);
        }
      });
}

AamSoftmaxHead::AamSoftmaxHead(int num_classes, int embedding_dim, Rng& rng) {
  const double a = std::sqrt(6.0 / (num_classes + embedding_dim));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> w(static_cast<std::size_t>(num_classes) * embedding_dim);
  for (auto& v : w) v = u(rng);
  weight = nn::Tensor::parameter({num_classes, embedding_dim}, std::move(w));
}

void ScheduleConfig::validate() const {
  if (!(lr_min > 0.0 && lr_min < lr_max)) throw ConfigError("schedule: need 0 < lr_min < lr_max");
  if (cycles < 1 || epochs_per_cycle < 1)
    throw ConfigError("schedule: cycles and epochs_per_cycle must be >= 1");
}

double lr_at(long step, long steps_per_cycle, const ScheduleConfig& cfg) {
  if (step < 0) throw Error("lr_at: negative step");
  if (steps_per_cycle <= 0) throw Error("lr_at: steps_per_cycle must be positive");
  const long cycle = step / steps_per_cycle;
  if (cycle >= cfg.cycles) return cfg.lr_min;
  const double peak = cfg.halve_per_cycle ? std::ldexp(cfg.lr_max, -static_cast<int>(cycle))
                                          : cfg.lr_max;
  const double pos = static_cast<double>(step % steps_per_cycle) / steps_per_cycle;
  const double tri = 1.0 - std::abs(2.0 * pos - 1.0);
  return tri * peak + (1.0 - tri) * cfg.lr_min;
}

TrainingSet TrainingSet::from_manifest(const Manifest& manifest) {
  TrainingSet set;
  const auto index = manifest.speaker_index();
  set.size = manifest.size();
  set.num_speakers = static_cast<int>(index.size());
  for (const auto& e : manifest.entries()) set.labels.push_back(index.at(e.speaker_id));
  set.load = [&manifest](std::size_t i) { return manifest.load(manifest.entries()[i]); };
  return set;
}

TrainingSet TrainingSet::from_segments(std::vector<AudioSegment> segments, std::vector<int> labels) {
  if (segments.size() != labels.size()) throw Error("training set: one label per segment");
  TrainingSet set;
  set.size = segments.size();
  set.num_speakers = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  set.labels = std::move(labels);
  auto shared = std::make_shared<std::vector<AudioSegment>>(std::move(segments));
  set.load = [shared](std::size_t i) { return (*shared)[i]; };
  return set;
}

Trainer::Trainer(SpeakerModel& model, TrainOptions opt)
    : model_(model), opt_(std::move(opt)), ptm_checksum_(model.ptm().checksum()) {
  opt_.loss.validate();
  opt_.schedule.validate();
  opt_.augment.validate();
  if (opt_.batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (!(opt_.crop_seconds > 0.0)) throw ConfigError("training: crop_seconds must be positive");
  if (opt_.loss.num_classes > 0) ensure_head(opt_.loss.num_classes);
}

void Trainer::ensure_head(int num_classes) {
  if (head_.weight.defined()) {
    if (head_.num_classes() != num_classes)
      throw Error("class count mismatch: loss has " + std::to_string(head_.num_classes()) +
                  " classes, data needs " + std::to_string(num_classes));
    return;
  }
  Rng rng(derive_seed(opt_.seed, kGroupClassifier));
  head_ = AamSoftmaxHead(num_classes, model_.config().backbone.embedding_dim, rng);
  std::vector<nn::AdamW::Slot> slots;
  for (const auto& [group, list] : model_.parameter_groups())
    for (const auto& t : list) slots.push_back({t.tensor, t.tensor.rank() >= 2});
  slots.push_back({head_.weight, true});
  optim_ = std::make_unique<nn::AdamW>(std::move(slots), opt_.optimizer);
}

double Trainer::step(const std::vector<AudioSegment>& batch, const std::vector<int>& labels,
                     double lr) {
  if (!optim_) throw Error("training: class count unknown; set loss.num_classes");
  optim_->zero_grad();
  const nn::Tensor emb = model_.forward(batch, true);
  const nn::Tensor loss = head_.loss(emb, labels, opt_.loss);
  loss.backward();
  optim_->step(lr);
  ++steps_;
  return loss.item();
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  if (model_.ptm().checksum() != ptm_checksum_)
    throw Error("frozen PTM parameters changed during training");
  write_checkpoint(path, opt_.config_snapshot, model_state(model_, &head_));
}

TrainResult Trainer::run(const TrainingSet& data) {
  if (data.size == 0) throw Error("training: empty training set");
  if (data.num_speakers < 2) throw Error("training: need at least 2 speakers");
  const int base = data.num_speakers;
  const int classes =
      opt_.speed_as_new_class ? base * (1 + static_cast<int>(opt_.augment.speed_factors.size()))
                              : base;
  if (opt_.loss.num_classes > 0 && opt_.loss.num_classes != classes)
    throw Error("class count mismatch: loss.num_classes " + std::to_string(opt_.loss.num_classes) +
                " but the data has " + std::to_string(classes));
  ensure_head(classes);

  const long per_epoch =
      opt_.steps_per_epoch > 0
          ? opt_.steps_per_epoch
          : static_cast<long>((data.size + opt_.batch_size - 1) / opt_.batch_size);
  const long per_cycle = per_epoch * opt_.schedule.epochs_per_cycle;
  long total = per_epoch * opt_.schedule.total_epochs();
  if (opt_.max_steps >= 0) total = std::min(total, opt_.max_steps);
  const std::size_t crop =
      model_.usable_length(static_cast<std::size_t>(std::lround(opt_.crop_seconds * kSampleRate)));
  if (model_.num_frames(crop) <= 0) throw ConfigError("training: crop shorter than one frame");

  std::ofstream metrics;
  if (!opt_.output_dir.empty()) {
    std::filesystem::create_directories(opt_.output_dir);
    metrics.open(opt_.output_dir / "metrics.jsonl");
    if (!metrics) throw Error("cannot write " + (opt_.output_dir / "metrics.jsonl").string());
  }

  TrainResult result;
  Rng rng(derive_seed(opt_.seed, "data"));
  std::uniform_int_distribution<std::size_t> pick(0, data.size - 1);
  std::vector<AudioSegment> batch;
  std::vector<int> labels;
  for (long s = 0; s < total; ++s) {
    batch.clear();
    labels.clear();
    for (int i = 0; i < opt_.batch_size; ++i) {
      const std::size_t idx = pick(rng);
      int speed = -1;
      const AudioSegment seg = augment(data.load(idx), opt_.augment, rng, &speed);
      batch.push_back(random_crop(seg, crop, rng));
      labels.push_back(data.labels[idx] + (opt_.speed_as_new_class && speed >= 0 ? base * (speed + 1) : 0));
    }
    const double lr = lr_at(s, per_cycle, opt_.schedule);
    const StepRecord rec{s, static_cast<int>(s / per_epoch) + 1, lr, step(batch, labels, lr)};
    result.log.push_back(rec);
    if (metrics.is_open()) {
      metrics << nlohmann::json{{"step", rec.step}, {"epoch", rec.epoch}, {"lr", rec.lr},
                                {"loss", rec.loss}}
                     .dump()
              << '\n';
      metrics.flush();
    }
    if (opt_.on_step) opt_.on_step(rec);
    if ((s + 1) % per_epoch == 0 && !opt_.output_dir.empty()) {
      const auto path = opt_.output_dir / ("epoch" + std::to_string(rec.epoch) + ".ckpt");
      save_checkpoint(path);
      result.checkpoints.push_back(path);
    }
  }
  if (model_.ptm().checksum() != ptm_checksum_)
    throw Error("frozen PTM parameters changed during training");
  result.ptm_checksum = ptm_checksum_;
  return result;
}

}  // namespace mrsv
