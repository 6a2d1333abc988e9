// Waveform ingestion, cropping and training-time augmentation.
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrsv/common.hpp"

namespace mrsv {

// Mono 16 kHz waveform plus provenance.
struct AudioSegment {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  std::string utterance_id;
  std::optional<std::string> speaker_id;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  // Throws unless the segment is non-empty, finite and at 16 kHz.
  void validate() const;
};

struct LoadOptions {
  // Average channels instead of rejecting multi-channel files.
  bool downmix = false;
};

// Reads a RIFF/WAVE file (PCM 8/16/24/32-bit or IEEE float32/64) and
// resamples to 16 kHz.  Amplitudes are scaled to [-1, 1) but otherwise
// left as decoded.
AudioSegment load_audio(const std::filesystem::path& path, const LoadOptions& opt = {});

// 16-bit PCM mono.
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate = kSampleRate);

// Output length of resample(): round-half-up of n * up / down.
std::size_t resampled_length(std::size_t n, int up, int down);

// Kaiser-windowed sinc, polyphase over the up/down phase pattern.  Each
// phase is normalized to unit DC gain.  up == down returns the input.
std::vector<float> resample(std::span<const float> x, int up, int down);
std::vector<float> resample_rate(std::span<const float> x, int from_rate, int to_rate);

// Contiguous window of target_len samples at an offset drawn uniformly from
// [0, size - target_len].  Shorter inputs are wrap-padded.
AudioSegment random_crop(const AudioSegment& seg, std::size_t target_len, Rng& rng);
// Window of round(duration_s * 16000) samples starting at
// floor((size - len) / 2); shorter inputs are returned whole.
AudioSegment middle_crop(const AudioSegment& seg, double duration_s);

// Playback-rate change: output length is resampled_length(size, den, num)
// where num/den is factor reduced to a fraction over 1000.
AudioSegment speed_perturb(const AudioSegment& seg, double factor);
// Mixes noise (looped from a random offset) at snr_db; +inf returns the input.
AudioSegment add_noise(const AudioSegment& seg, const AudioSegment& noise, double snr_db,
                       Rng& rng);
// Convolves with a unit-energy impulse response aligned at its peak and
// truncates to the input length.
AudioSegment apply_rir(const AudioSegment& seg, const AudioSegment& rir);

struct ClipPool {
  std::vector<AudioSegment> clips;
  const AudioSegment& pick(Rng& rng) const;
};

struct AugmentPolicy {
  std::vector<double> speed_factors;
  std::optional<ClipPool> noise;
  std::optional<ClipPool> rir;
  double snr_low_db = 0.0;
  double snr_high_db = 15.0;

  void validate() const;
  bool disabled() const;
};

// Draws one option uniformly from {none, each speed factor, noise, rir}
// (unavailable sources are skipped) and applies it.  speed_index receives
// the index of the applied speed factor, or -1.
AudioSegment augment(const AudioSegment& seg, const AugmentPolicy& policy, Rng& rng,
                     int* speed_index = nullptr);

}  // namespace mrsv
