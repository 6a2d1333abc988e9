#include "mrsv/audio.hpp"

#include <fftw3.h>

#include "fftw_lock.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace mrsv {

void AudioSegment::validate() const {
  if (sample_rate != kSampleRate)
    throw Error("segment '" + utterance_id + "' at " + std::to_string(sample_rate) +
                " Hz, expected 16000");
  if (samples.empty()) throw Error("segment '" + utterance_id + "' is empty");
  for (float v : samples)
    if (!std::isfinite(v)) throw Error("segment '" + utterance_id + "' has non-finite samples");
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

[[noreturn]] void decode_failure(const std::filesystem::path& path, const std::string& why) {
  throw Error("decode failure: " + path.string() + ": " + why);
}

double decode_sample(const unsigned char* p, int format, int bits) {
  if (format == 3) {
    if (bits == 32) {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v |= ~0xffffff;
      return v / 8388608.0;
    }
    default:
      return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
  }
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  if (std::abs(x) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

constexpr int kZeroCrossings = 16;
constexpr double kKaiserBeta = 8.0;

std::pair<int, int> speed_fraction(double factor) {
  const int num = static_cast<int>(std::lround(factor * 1000.0));
  if (num <= 0) throw Error("speed factor must be positive");
  const int g = std::gcd(num, 1000);
  return {num / g, 1000 / g};
}

}  // namespace

AudioSegment load_audio(const std::filesystem::path& path, const LoadOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open audio file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) ||
      std::memcmp(bytes.data() + 8, "WAVE", 4))
    decode_failure(path, "missing RIFF/WAVE header");

  int format = 0, channels = 0, rate = 0, bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (!std::memcmp(chunk, "fmt ", 4)) {
      if (len < 16 || body + len > bytes.size()) decode_failure(path, "truncated fmt chunk");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = static_cast<int>(read_u32(bytes.data() + body + 4));
      bits = read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = read_u16(bytes.data() + body + 24);
    } else if (!std::memcmp(chunk, "data", 4)) {
      data = bytes.data() + body;
      data_len = std::min(len, bytes.size() - body);
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!format) decode_failure(path, "no fmt chunk");
  if (!data) decode_failure(path, "no data chunk");
  const bool pcm_ok = format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool float_ok = format == 3 && (bits == 32 || bits == 64);
  if (!pcm_ok && !float_ok)
    decode_failure(path, "unsupported encoding (format " + std::to_string(format) + ", " +
                             std::to_string(bits) + " bits)");
  if (channels < 1 || rate <= 0) decode_failure(path, "invalid channel count or sample rate");
  if (channels > 1 && !opt.downmix)
    throw Error("multi-channel input (" + std::to_string(channels) + " channels) in " +
                path.string() + "; enable downmix");

  const std::size_t frame_bytes = static_cast<std::size_t>(bits / 8) * channels;
  const std::size_t frames = data_len / frame_bytes;
  std::vector<float> samples(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c)
      acc += decode_sample(data + i * frame_bytes + c * (bits / 8), format, bits);
    samples[i] = static_cast<float>(acc / channels);
  }

  AudioSegment seg;
  seg.utterance_id = path.stem().string();
  seg.samples = rate == kSampleRate ? std::move(samples) : resample_rate(samples, rate, kSampleRate);
  if (seg.samples.empty()) decode_failure(path, "no samples");
  return seg;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto u32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto u16 = [&](std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
  };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  u32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(1);
  u32(static_cast<std::uint32_t>(sample_rate));
  u32(static_cast<std::uint32_t>(sample_rate * 2));
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(data_bytes);
  for (float v : samples) {
    const double s = std::clamp(static_cast<double>(v), -1.0, 32767.0 / 32768.0);
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(s * 32768.0))));
  }
}

std::size_t resampled_length(std::size_t n, int up, int down) {
  return (2 * n * static_cast<std::size_t>(up) + static_cast<std::size_t>(down)) /
         (2 * static_cast<std::size_t>(down));
}

std::vector<float> resample(std::span<const float> x, int up, int down) {
  if (up <= 0 || down <= 0) throw Error("resample: non-positive rate ratio");
  const int g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == down) return {x.begin(), x.end()};

  const double cutoff = std::min(1.0, static_cast<double>(up) / down);
  const double half_width = kZeroCrossings / cutoff;
  const int taps_each_side = static_cast<int>(std::ceil(half_width));
  const int ntaps = 2 * taps_each_side;

  // Phase p covers output positions with fractional input offset p/up.
  std::vector<double> table(static_cast<std::size_t>(up) * ntaps);
  for (int p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    double total = 0.0;
    for (int i = 0; i < ntaps; ++i) {
      const double tau = frac - (i - taps_each_side + 1);
      const double h = cutoff * sinc(cutoff * tau) * kaiser(tau / half_width, kKaiserBeta);
      table[static_cast<std::size_t>(p) * ntaps + i] = h;
      total += h;
    }
    for (int i = 0; i < ntaps; ++i) table[static_cast<std::size_t>(p) * ntaps + i] /= total;
  }

  const std::size_t out_len = resampled_length(x.size(), up, down);
  std::vector<float> y(out_len);
  const long long n = static_cast<long long>(x.size());
  for (std::size_t j = 0; j < out_len; ++j) {
    const long long num = static_cast<long long>(j) * down;
    const long long base = num / up;
    const int phase = static_cast<int>(num % up);
    const double* h = table.data() + static_cast<std::size_t>(phase) * ntaps;
    double acc = 0.0;
    for (int i = 0; i < ntaps; ++i) {
      const long long k = base + i - taps_each_side + 1;
      if (k >= 0 && k < n) acc += h[i] * x[static_cast<std::size_t>(k)];
    }
    y[j] = static_cast<float>(acc);
  }
  return y;
}

std::vector<float> resample_rate(std::span<const float> x, int from_rate, int to_rate) {
  return resample(x, to_rate, from_rate);
}

AudioSegment random_crop(const AudioSegment& seg, std::size_t target_len, Rng& rng) {
  if (target_len == 0) throw Error("random_crop: target length must be positive");
  if (seg.samples.empty()) throw Error("random_crop: empty segment");
  AudioSegment out;
  out.sample_rate = seg.sample_rate;
  out.utterance_id = seg.utterance_id;
  out.speaker_id = seg.speaker_id;
  const std::size_t n = seg.size();
  if (n <= target_len) {
    out.samples.resize(target_len);
    for (std::size_t i = 0; i < target_len; ++i) out.samples[i] = seg.samples[i % n];
    return out;
  }
  std::uniform_int_distribution<std::size_t> offset(0, n - target_len);
  const std::size_t start = offset(rng);
  out.samples.assign(seg.samples.begin() + start, seg.samples.begin() + start + target_len);
  return out;
}

AudioSegment middle_crop(const AudioSegment& seg, double duration_s) {
  if (!(duration_s > 0.0)) throw Error("middle_crop: duration must be positive");
  const auto len = static_cast<std::size_t>(std::llround(duration_s * seg.sample_rate));
  if (len >= seg.size()) return seg;
  AudioSegment out;
  out.sample_rate = seg.sample_rate;
  out.utterance_id = seg.utterance_id;
  out.speaker_id = seg.speaker_id;
  const std::size_t start = (seg.size() - len) / 2;
  out.samples.assign(seg.samples.begin() + start, seg.samples.begin() + start + len);
  return out;
}

AudioSegment speed_perturb(const AudioSegment& seg, double factor) {
  const auto [num, den] = speed_fraction(factor);
  AudioSegment out = seg;
  out.samples = resample(seg.samples, den, num);
  return out;
}

AudioSegment add_noise(const AudioSegment& seg, const AudioSegment& noise, double snr_db,
                       Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return seg;
  if (noise.samples.empty()) return seg;
  double ps = 0.0, pn = 0.0;
  for (float v : seg.samples) ps += static_cast<double>(v) * v;
  std::uniform_int_distribution<std::size_t> offset(0, noise.size() - 1);
  const std::size_t start = offset(rng);
  std::vector<double> n(seg.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    n[i] = noise.samples[(start + i) % noise.size()];
    pn += n[i] * n[i];
  }
  if (ps <= 0.0 || pn <= 0.0) return seg;
  const double gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  AudioSegment out = seg;
  for (std::size_t i = 0; i < n.size(); ++i)
    out.samples[i] = static_cast<float>(seg.samples[i] + gain * n[i]);
  return out;
}

AudioSegment apply_rir(const AudioSegment& seg, const AudioSegment& rir) {
  if (rir.samples.empty() || seg.samples.empty()) return seg;
  std::size_t peak = 0;
  double energy = 0.0;
  for (std::size_t i = 0; i < rir.size(); ++i) {
    energy += static_cast<double>(rir.samples[i]) * rir.samples[i];
    if (std::abs(rir.samples[i]) > std::abs(rir.samples[peak])) peak = i;
  }
  if (energy <= 0.0) return seg;
  const double norm = 1.0 / std::sqrt(energy);
  const std::size_t hlen = rir.size() - peak;
  const std::size_t n = seg.size();
  std::size_t nfft = 1;
  while (nfft < n + hlen - 1) nfft <<= 1;

  std::vector<double> a(nfft, 0.0), b(nfft, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i] = seg.samples[i];
  for (std::size_t i = 0; i < hlen; ++i) b[i] = rir.samples[peak + i] * norm;
  const std::size_t nbins = nfft / 2 + 1;
  auto* fa = fftw_alloc_complex(nbins);
  auto* fb = fftw_alloc_complex(nbins);
  fftw_plan pa, pb, pinv;
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    pa = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), a.data(), fa, FFTW_ESTIMATE);
    pb = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), b.data(), fb, FFTW_ESTIMATE);
    pinv = fftw_plan_dft_c2r_1d(static_cast<int>(nfft), fa, a.data(), FFTW_ESTIMATE);
  }
  fftw_execute(pa);
  fftw_execute(pb);
  for (std::size_t k = 0; k < nbins; ++k) {
    const double re = fa[k][0] * fb[k][0] - fa[k][1] * fb[k][1];
    const double im = fa[k][0] * fb[k][1] + fa[k][1] * fb[k][0];
    fa[k][0] = re;
    fa[k][1] = im;
  }
  fftw_execute(pinv);
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(pa);
    fftw_destroy_plan(pb);
    fftw_destroy_plan(pinv);
  }
  fftw_free(fa);
  fftw_free(fb);

  AudioSegment out = seg;
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(a[i] / nfft);
  return out;
}

const AudioSegment& ClipPool::pick(Rng& rng) const {
  if (clips.empty()) throw Error("empty clip pool");
  std::uniform_int_distribution<std::size_t> d(0, clips.size() - 1);
  return clips[d(rng)];
}

void AugmentPolicy::validate() const {
  for (double f : speed_factors)
    if (!(f > 0.0)) throw ConfigError("augment: speed factors must be positive");
  if (snr_low_db > snr_high_db) throw ConfigError("augment: snr range is empty");
  if (noise && noise->clips.empty()) throw ConfigError("augment: noise pool is empty");
  if (rir && rir->clips.empty()) throw ConfigError("augment: rir pool is empty");
}

bool AugmentPolicy::disabled() const { return speed_factors.empty() && !noise && !rir; }

AudioSegment augment(const AudioSegment& seg, const AugmentPolicy& policy, Rng& rng,
                     int* speed_index) {
  if (speed_index) *speed_index = -1;
  if (policy.disabled()) return seg;
  const std::size_t n_speed = policy.speed_factors.size();
  const std::size_t options = 1 + n_speed + (policy.noise ? 1 : 0) + (policy.rir ? 1 : 0);
  std::uniform_int_distribution<std::size_t> pick(0, options - 1);
  std::size_t choice = pick(rng);
  if (choice == 0) return seg;
  --choice;
  if (choice < n_speed) {
    if (speed_index) *speed_index = static_cast<int>(choice);
    return speed_perturb(seg, policy.speed_factors[choice]);
  }
  choice -= n_speed;
  if (policy.noise && choice == 0) {
    std::uniform_real_distribution<double> snr(policy.snr_low_db, policy.snr_high_db);
    const double snr_db = snr(rng);
    return add_noise(seg, policy.noise->pick(rng), snr_db, rng);
  }
  return apply_rir(seg, policy.rir->pick(rng));
}

}  // namespace mrsv
