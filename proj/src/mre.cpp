#include "mrsv/mre.hpp"

#include <string>

namespace mrsv {

namespace {

nn::Tensor identity_gain(int channels) {
  return nn::Tensor::parameter({channels}, std::vector<double>(channels, 1.0));
}

nn::Tensor zero_bias(int channels) {
  return nn::Tensor::parameter({channels}, std::vector<double>(channels, 0.0));
}

std::string constraint_text(int shift, int frame_shift) {
  return "shift " + std::to_string(shift) + " with frame_shift " + std::to_string(frame_shift) +
         ": window/2 * aligner_kernel/2 must equal frame_shift";
}

}  // namespace

MREConfig validate_config(MREConfig cfg) {
  if (cfg.shifts.empty()) throw ConfigError("mre: at least one window shift required");
  if (cfg.frame_shift <= 0) throw ConfigError("mre: frame_shift must be positive");
  if (cfg.encoder_kernels <= 0 || cfg.tcn_channels <= 0 || cfg.out_channels <= 0)
    throw ConfigError("mre: channel counts must be positive");
  if (cfg.tcn_blocks < 0) throw ConfigError("mre: tcn_blocks must be >= 0");
  if (cfg.tcn_blocks > 0) {
    if (cfg.tcn_kernel <= 0 || cfg.tcn_kernel % 2 == 0)
      throw ConfigError("mre: tcn_kernel must be a positive odd number");
    if (cfg.tcn_dilations.empty()) throw ConfigError("mre: tcn_dilations must be non-empty");
    for (int d : cfg.tcn_dilations)
      if (d <= 0) throw ConfigError("mre: tcn dilations must be positive");
  }
  cfg.aligner_kernels.clear();
  for (int shift : cfg.shifts) {
    if (shift <= 0) throw ConfigError("mre: window shifts must be positive");
    // M_n = 4 S / W_n = 2 S / shift_n
    if ((2 * cfg.frame_shift) % shift != 0)
      throw ConfigError("mre: non-integer aligner kernel M_n = " +
                        std::to_string(2.0 * cfg.frame_shift / shift) + " for " +
                        constraint_text(shift, cfg.frame_shift));
    const int m = 2 * cfg.frame_shift / shift;
    if (m % 2 != 0)
      throw ConfigError("mre: odd aligner kernel M_n = " + std::to_string(m) + " for " +
                        constraint_text(shift, cfg.frame_shift));
    cfg.aligner_kernels.push_back(m);
  }
  return cfg;
}

std::vector<double> temporal_resolutions_ms(const MREConfig& cfg) {
  std::vector<double> out;
  for (int s : cfg.shifts) out.push_back(1000.0 * s / kSampleRate);
  return out;
}

nn::Tensor waveform_batch(const std::vector<AudioSegment>& batch) {
  if (batch.empty()) throw Error("empty waveform batch");
  const std::size_t n = batch[0].size();
  std::vector<double> values;
  values.reserve(batch.size() * n);
  for (const auto& seg : batch) {
    if (seg.size() != n) throw Error("waveform batch: segments differ in length");
    values.insert(values.end(), seg.samples.begin(), seg.samples.end());
  }
  return nn::Tensor::from({static_cast<int>(batch.size()), 1, static_cast<int>(n)},
                          std::move(values));
}

void check_input_length(std::size_t num_samples, const MREConfig& cfg) {
  if (num_samples == 0 || num_samples % cfg.frame_shift != 0)
    throw Error("input not a multiple of frame shift (" + std::to_string(num_samples) +
                " samples, frame shift " + std::to_string(cfg.frame_shift) + ")");
}

TcnBlock::TcnBlock(int channels, int kernel, int dilation, Rng& rng)
    : in_(channels, channels, 1, {}, rng),
      depthwise_(channels, channels, kernel,
                 [&] {
                   auto o = nn::same_padding(kernel, dilation);
                   o.groups = channels;
                   return o;
                 }(),
                 rng),
      out_(channels, channels, 1, {}, rng),
      gain1_(identity_gain(channels)),
      bias1_(zero_bias(channels)),
      gain2_(identity_gain(channels)),
      bias2_(zero_bias(channels)) {}

nn::Tensor TcnBlock::forward(const nn::Tensor& x) const {
  nn::Tensor h = nn::global_layer_norm(nn::relu(in_.forward(x)), gain1_, bias1_);
  h = nn::global_layer_norm(nn::relu(depthwise_.forward(h)), gain2_, bias2_);
  return nn::add(x, out_.forward(h));
}

void TcnBlock::collect(const std::string& prefix, nn::TensorList& out) const {
  in_.collect(prefix + ".in", out);
  out.push_back({prefix + ".gln1.gain", gain1_});
  out.push_back({prefix + ".gln1.bias", bias1_});
  depthwise_.collect(prefix + ".depthwise", out);
  out.push_back({prefix + ".gln2.gain", gain2_});
  out.push_back({prefix + ".gln2.bias", bias2_});
  out_.collect(prefix + ".out", out);
}

SingleResolutionEncoder::SingleResolutionEncoder(const MREConfig& cfg, int index, Rng& rng)
    : frame_shift_(cfg.frame_shift) {
  const int shift = cfg.shifts.at(index);
  const int window = 2 * shift;
  const int m = cfg.aligner_kernels.at(index);
  // Total padding of W/2 (and M/2 below) makes the strided frame counts
  // exactly 2L/W and L/frame_shift.
  encoder_ = nn::Conv1d(1, cfg.encoder_kernels, window,
                        {.stride = shift, .pad_left = shift / 2, .pad_right = shift - shift / 2},
                        rng);
  bottleneck_ = nn::Conv1d(cfg.encoder_kernels, cfg.tcn_channels, 1, {}, rng);
  for (int b = 0; b < cfg.tcn_blocks; ++b)
    blocks_.emplace_back(cfg.tcn_channels, cfg.tcn_kernel,
                         cfg.tcn_dilations[b % cfg.tcn_dilations.size()], rng);
  aligner_ = nn::Conv1d(cfg.tcn_channels, cfg.out_channels, m,
                        {.stride = m / 2, .pad_left = m / 4, .pad_right = m / 2 - m / 4}, rng);
}

nn::Tensor SingleResolutionEncoder::encode(const nn::Tensor& wave) const {
  if (wave.rank() != 3 || wave.dim(1) != 1)
    throw Error("sre: expected [B, 1, L] waveform, got " + nn::shape_str(wave.shape()));
  if (wave.dim(2) % frame_shift_ != 0)
    throw Error("input not a multiple of frame shift (" + std::to_string(wave.dim(2)) +
                " samples, frame shift " + std::to_string(frame_shift_) + ")");
  return nn::relu(encoder_.forward(wave));
}

nn::Tensor SingleResolutionEncoder::forward(const nn::Tensor& wave) const {
  nn::Tensor h = bottleneck_.forward(encode(wave));
  for (const auto& b : blocks_) h = b.forward(h);
  return aligner_.forward(h);
}

void SingleResolutionEncoder::collect(const std::string& prefix, nn::TensorList& out) const {
  encoder_.collect(prefix + ".encoder", out);
  bottleneck_.collect(prefix + ".bottleneck", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    blocks_[b].collect(prefix + ".tcn" + std::to_string(b), out);
  aligner_.collect(prefix + ".aligner", out);
}

MultiResolutionEncoder::MultiResolutionEncoder(const MREConfig& cfg, Rng& rng)
    : cfg_(validate_config(cfg)),
      gain_(identity_gain(cfg_.output_channels())),
      bias_(zero_bias(cfg_.output_channels())) {
  for (int n = 0; n < cfg_.num_encoders(); ++n) encoders_.emplace_back(cfg_, n, rng);
}

nn::Tensor MultiResolutionEncoder::forward(const nn::Tensor& wave) const {
  std::vector<nn::Tensor> parts;
  for (const auto& e : encoders_) parts.push_back(e.forward(wave));
  return nn::global_layer_norm(nn::concat(parts, 1), gain_, bias_);
}

void MultiResolutionEncoder::collect(const std::string& prefix, nn::TensorList& out) const {
  for (std::size_t n = 0; n < encoders_.size(); ++n)
    encoders_[n].collect(prefix + ".sre" + std::to_string(n), out);
  out.push_back({prefix + ".gln.gain", gain_});
  out.push_back({prefix + ".gln.bias", bias_});
}

nn::Tensor gln(const nn::Tensor& x, const nn::Tensor& gain, const nn::Tensor& bias) {
  if (x.rank() == 2)
    return nn::reshape(nn::global_layer_norm(nn::reshape(x, {1, x.dim(0), x.dim(1)}), gain, bias),
                       x.shape());
  return nn::global_layer_norm(x, gain, bias);
}

nn::Tensor downsample(const nn::Tensor& z, int target_frames) {
  const int frames = z.dim(z.rank() - 1);
  if (target_frames <= 0 || target_frames > frames)
    throw Error("downsample: target " + std::to_string(target_frames) + " frames exceeds input " +
                std::to_string(frames));
  if (z.rank() == 2)
    return nn::reshape(nn::adaptive_avg_pool1d(nn::reshape(z, {1, z.dim(0), frames}), target_frames),
                       {z.dim(0), target_frames});
  return nn::adaptive_avg_pool1d(z, target_frames);
}

}  // namespace mrsv
