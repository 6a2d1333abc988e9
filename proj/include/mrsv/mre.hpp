// Multi-resolution waveform encoder: N strided conv + TCN branches whose
// aligning convolutions land on one shared frame shift.
#pragma once

#include <vector>

#include "mrsv/audio.hpp"
#include "mrsv/nn/layers.hpp"

namespace mrsv {

struct MREConfig {
  std::vector<int> shifts{25, 50, 100, 200};  // W_n / 2, in samples
  int frame_shift = 200;                      // common output shift, samples
  int encoder_kernels = 256;                  // H
  int tcn_channels = 256;                     // P
  int out_channels = 128;                     // Q per branch
  int tcn_blocks = 3;
  int tcn_kernel = 3;
  std::vector<int> tcn_dilations{1, 2, 4};    // cycled over blocks
  // Filled by validate_config: M_n = 2 * frame_shift / shift_n.
  std::vector<int> aligner_kernels;

  int num_encoders() const { return static_cast<int>(shifts.size()); }
  int output_channels() const { return num_encoders() * out_channels; }
};

// Checks (W_n/2)(M_n/2) = frame_shift with M_n a positive even integer and
// fills aligner_kernels.  Throws ConfigError otherwise.
MREConfig validate_config(MREConfig cfg);

// shift / 16 kHz, in milliseconds.
std::vector<double> temporal_resolutions_ms(const MREConfig& cfg);

// [B, L] float samples -> [B, 1, L]; segments must share a length.
nn::Tensor waveform_batch(const std::vector<AudioSegment>& batch);

// conv1x1 -> ReLU -> gLN -> depthwise dilated conv -> ReLU -> gLN -> conv1x1,
// plus the residual input.
class TcnBlock {
 public:
  TcnBlock() = default;
  TcnBlock(int channels, int kernel, int dilation, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x) const;
  void collect(const std::string& prefix, nn::TensorList& out) const;

 private:
  nn::Conv1d in_, depthwise_, out_;
  nn::Tensor gain1_, bias1_, gain2_, bias2_;
};

class SingleResolutionEncoder {
 public:
  SingleResolutionEncoder() = default;
  SingleResolutionEncoder(const MREConfig& cfg, int index, Rng& rng);

  // [B, 1, L] -> [B, Q, L / frame_shift]
  nn::Tensor forward(const nn::Tensor& wave) const;
  // Frames after the strided encoder: 2L / W_n.
  nn::Tensor encode(const nn::Tensor& wave) const;
  void collect(const std::string& prefix, nn::TensorList& out) const;

 private:
  int frame_shift_ = 0;
  nn::Conv1d encoder_, bottleneck_, aligner_;
  std::vector<TcnBlock> blocks_;
};

class MultiResolutionEncoder {
 public:
  MultiResolutionEncoder() = default;
  // cfg is validated here.
  MultiResolutionEncoder(const MREConfig& cfg, Rng& rng);

  // [B, 1, L] -> z_cond [B, N*Q, L / frame_shift]
  nn::Tensor forward(const nn::Tensor& wave) const;
  const SingleResolutionEncoder& encoder(int n) const { return encoders_.at(n); }
  const MREConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, nn::TensorList& out) const;

 private:
  MREConfig cfg_;
  std::vector<SingleResolutionEncoder> encoders_;
  nn::Tensor gain_, bias_;
};

// Throws "input not a multiple of frame shift" when L % frame_shift != 0.
void check_input_length(std::size_t num_samples, const MREConfig& cfg);

// Global layer norm over all channel x time elements; x is [C, T] or [B, C, T].
nn::Tensor gln(const nn::Tensor& x, const nn::Tensor& gain, const nn::Tensor& bias);

// Adaptive average pooling on the last axis to target_frames.
nn::Tensor downsample(const nn::Tensor& z, int target_frames);

}  // namespace mrsv
