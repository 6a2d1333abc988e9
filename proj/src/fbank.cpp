#include "mrsv/fbank.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fftw_lock.hpp"

namespace mrsv {

namespace {

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

}  // namespace

int fbank_num_frames(std::size_t num_samples, const FbankOptions& opt) {
  if (num_samples < static_cast<std::size_t>(opt.frame_length)) return 0;
  return static_cast<int>((num_samples - opt.frame_length) / opt.frame_shift) + 1;
}

FbankComputer::FbankComputer(FbankOptions opt) : opt_(opt) {
  if (opt_.frame_length <= 0 || opt_.frame_shift <= 0 || opt_.fft_size < opt_.frame_length ||
      opt_.num_bins <= 0)
    throw ConfigError("fbank: invalid frame geometry");
  if (!(opt_.low_hz >= 0.0 && opt_.high_hz > opt_.low_hz && opt_.high_hz <= kSampleRate / 2.0))
    throw ConfigError("fbank: invalid mel frequency range");

  const int n = opt_.frame_length;
  window_.resize(n);
  for (int i = 0; i < n; ++i)
    window_[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (n - 1));

  // Triangles evenly spaced on the mel axis, evaluated at each FFT bin's
  // mel frequency.
  const int half = opt_.fft_size / 2;
  const double mel_lo = hz_to_mel(opt_.low_hz), mel_hi = hz_to_mel(opt_.high_hz);
  const double delta = (mel_hi - mel_lo) / (opt_.num_bins + 1);
  filters_.resize(opt_.num_bins);
  for (int b = 0; b < opt_.num_bins; ++b) {
    const double left = mel_lo + b * delta, center = left + delta, right = center + delta;
    int first = -1;
    std::vector<double> w;
    for (int k = 0; k <= half; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * kSampleRate / opt_.fft_size);
      double weight = 0.0;
      if (mel > left && mel < right)
        weight = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
      if (weight > 0.0) {
        if (first < 0) first = k;
        w.resize(k - first + 1, 0.0);
        w[k - first] = weight;
      }
    }
    if (first < 0) throw ConfigError("fbank: empty mel filter; too many bins for the FFT size");
    filters_[b] = {first, std::move(w)};
  }

  std::lock_guard lock(detail::fftw_planner_mutex());
  double* in = fftw_alloc_real(opt_.fft_size);
  fftw_complex* out = fftw_alloc_complex(half + 1);
  plan_ = fftw_plan_dft_r2c_1d(opt_.fft_size, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(in);
  fftw_free(out);
  if (!plan_) throw Error("fbank: FFT planning failed");
}

FbankComputer::~FbankComputer() {
  if (!plan_) return;
  std::lock_guard lock(detail::fftw_planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_));
}

FbankFeature FbankComputer::compute(const AudioSegment& seg) const {
  if (seg.sample_rate != kSampleRate)
    throw Error("fbank: expected " + std::to_string(kSampleRate) + " Hz input");
  const int frames = fbank_num_frames(seg.size(), opt_);
  if (frames <= 0) throw Error("fbank: segment shorter than one frame");
  const int n = opt_.frame_length, half = opt_.fft_size / 2, bins = opt_.num_bins;

  std::vector<double> out(static_cast<std::size_t>(bins) * frames);
  std::vector<double> buf(opt_.fft_size);
  std::vector<double> spec(2 * (half + 1));
  std::vector<double> power(half + 1);
  auto* spec_c = reinterpret_cast<fftw_complex*>(spec.data());

  for (int t = 0; t < frames; ++t) {
    const float* x = seg.samples.data() + static_cast<std::size_t>(t) * opt_.frame_shift;
    double dc = 0.0;
    for (int i = 0; i < n; ++i) dc += x[i];
    dc /= n;
    for (int i = 0; i < n; ++i) buf[i] = x[i] - dc;
    for (int i = n - 1; i > 0; --i) buf[i] -= opt_.preemphasis * buf[i - 1];
    buf[0] -= opt_.preemphasis * buf[0];
    for (int i = 0; i < n; ++i) buf[i] *= window_[i];
    std::fill(buf.begin() + n, buf.end(), 0.0);

    fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_), buf.data(), spec_c);
    for (int k = 0; k <= half; ++k)
      power[k] = spec[2 * k] * spec[2 * k] + spec[2 * k + 1] * spec[2 * k + 1];

    for (int b = 0; b < bins; ++b) {
      const auto& [first, w] = filters_[b];
      double e = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) e += w[j] * power[first + j];
      out[static_cast<std::size_t>(b) * frames + t] = std::log(std::max(e, opt_.energy_floor));
    }
  }
  return {nn::Tensor::from({bins, frames}, std::move(out))};
}

FbankFeature compute_fbank(const AudioSegment& seg) {
  static const FbankComputer computer;
  return computer.compute(seg);
}

FbankAligner::FbankAligner(int num_bins, int out_dim, Rng& rng)
    : conv_(num_bins, out_dim, 3, {.stride = 2, .pad_left = 1, .pad_right = 1}, rng),
      bn_(out_dim) {}

nn::Tensor FbankAligner::forward(const nn::Tensor& fbank, int target_frames, bool training) const {
  if (fbank.rank() != 3 || fbank.dim(1) != conv_.in_channels())
    throw Error("fbank aligner: expected [B, " + std::to_string(conv_.in_channels()) +
                ", T] input, got " + nn::shape_str(fbank.shape()));
  const int tf = fbank.dim(2), t = target_frames;
  if (t <= 0 || tf < 2 * t - 1 || tf > 2 * t + 1)
    throw Error("frame misalignment: " + std::to_string(tf) + " fbank frames cannot map to " +
                std::to_string(t) + " target frames");
  nn::Tensor x = tf == 2 * t + 1 ? nn::narrow(fbank, 2, 0, 2 * t) : fbank;
  nn::Tensor y = bn_.forward(nn::relu(conv_.forward(x)), training);
  if (y.dim(2) != t) throw Error("frame misalignment: aligner produced " +
                                 std::to_string(y.dim(2)) + " frames, expected " +
                                 std::to_string(t));
  return y;
}

void FbankAligner::collect(const std::string& prefix, nn::TensorList& out) const {
  conv_.collect(prefix + ".conv", out);
  bn_.collect(prefix + ".bn", out);
}

void FbankAligner::collect_buffers(const std::string& prefix, nn::TensorList& out) const {
  bn_.collect_buffers(prefix + ".bn", out);
}

nn::Tensor align_fbank(const FbankAligner& aligner, const FbankFeature& f, int target_frames,
                       int target_dim, bool training) {
  if (aligner.out_dim() != target_dim)
    throw Error("fbank aligner: output dim " + std::to_string(aligner.out_dim()) +
                " does not match target dim " + std::to_string(target_dim));
  const nn::Tensor batch = nn::reshape(f.values, {1, f.num_bins(), f.num_frames()});
  const nn::Tensor y = aligner.forward(batch, target_frames, training);
  return nn::reshape(y, {target_dim, target_frames});
}

}  // namespace mrsv
