// 80-bin log mel filterbank and the strided CNN that maps it onto the
// 20 ms pretrained-model frame grid.
#pragma once

#include <memory>
#include <vector>

#include "mrsv/audio.hpp"
#include "mrsv/nn/layers.hpp"

namespace mrsv {

struct FbankOptions {
  int frame_length = 400;  // 25 ms
  int frame_shift = 160;   // 10 ms
  int fft_size = 512;
  int num_bins = 80;
  double low_hz = 20.0;
  double high_hz = 8000.0;
  double preemphasis = 0.97;
  double energy_floor = 1e-10;
};

// Frames without center padding: floor((n - frame_length) / frame_shift) + 1.
int fbank_num_frames(std::size_t num_samples, const FbankOptions& opt = {});

// values: [num_bins, frames], natural-log mel energies.
struct FbankFeature {
  nn::Tensor values;
  int num_bins() const { return values.dim(0); }
  int num_frames() const { return values.dim(1); }
};

// Per frame: DC removal, pre-emphasis, Hamming window, 512-point power
// spectrum, HTK-mel triangular filters, log(max(energy, floor)).
class FbankComputer {
 public:
  explicit FbankComputer(FbankOptions opt = {});
  ~FbankComputer();
  FbankComputer(const FbankComputer&) = delete;
  FbankComputer& operator=(const FbankComputer&) = delete;

  FbankFeature compute(const AudioSegment& seg) const;
  const FbankOptions& options() const { return opt_; }

 private:
  FbankOptions opt_;
  std::vector<double> window_;
  // filters_[bin] = (first fft index, weights)
  std::vector<std::pair<int, std::vector<double>>> filters_;
  void* plan_ = nullptr;
};

FbankFeature compute_fbank(const AudioSegment& seg);

// Conv1d(num_bins -> out_dim, kernel 3, stride 2, pad 1) -> ReLU -> BN.
class FbankAligner {
 public:
  FbankAligner() = default;
  FbankAligner(int num_bins, int out_dim, Rng& rng);

  // fbank: [B, num_bins, T_f] with T_f in {2T-1, 2T, 2T+1}; an extra
  // trailing frame is dropped.  Returns [B, out_dim, target_frames].
  nn::Tensor forward(const nn::Tensor& fbank, int target_frames, bool training) const;

  int out_dim() const { return conv_.out_channels(); }
  void collect(const std::string& prefix, nn::TensorList& out) const;
  void collect_buffers(const std::string& prefix, nn::TensorList& out) const;

 private:
  nn::Conv1d conv_;
  mutable nn::BatchNorm1d bn_;
};

// Single-feature form of FbankAligner::forward, checking the requested
// channel count.  Output: [target_dim, target_frames].
nn::Tensor align_fbank(const FbankAligner& aligner, const FbankFeature& f, int target_frames,
                       int target_dim, bool training = false);

}  // namespace mrsv
