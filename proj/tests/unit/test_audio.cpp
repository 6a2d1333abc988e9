#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "mrsv/audio.hpp"
#include "mrsv/dataset.hpp"

using namespace mrsv;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mrsv_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

AudioSegment ramp(std::size_t n) {
  AudioSegment s;
  s.utterance_id = "ramp";
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.samples[i] = static_cast<float>(i % 1000) / 1000.0f;
  return s;
}

std::vector<float> sine(std::size_t n, double hz, int rate) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  return v;
}

}  // namespace

TEST_CASE("load_audio reads 16 kHz files and resamples 8 kHz ones") {
  const auto p16 = scratch("two_sec.wav");
  write_wav(p16, sine(32000, 440.0, 16000), 16000);
  const AudioSegment a = load_audio(p16);
  CHECK(a.size() == 32000);
  CHECK(a.sample_rate == kSampleRate);

  const auto p8 = scratch("one_sec_8k.wav");
  write_wav(p8, sine(8000, 440.0, 8000), 8000);
  const AudioSegment b = load_audio(p8);
  CHECK(b.size() == 16000);
  // Band-limited content survives: compare against the analytic tone away
  // from the edges (16-bit quantization plus filter ripple).
  const auto ref = sine(16000, 440.0, 16000);
  double worst = 0.0;
  for (std::size_t i = 200; i < 15800; ++i) worst = std::max(worst, std::abs(double(b.samples[i]) - ref[i]));
  CHECK(worst < 5e-3);
}

TEST_CASE("load_audio rejects a corrupt header") {
  const auto p = scratch("corrupt.wav");
  std::ofstream(p, std::ios::binary) << "RIFX1234WAVEjunkjunkjunk";
  CHECK_THROWS_WITH_AS(load_audio(p), doctest::Contains("decode failure"), Error);
}

TEST_CASE("wav roundtrip at 16 bit") {
  const auto p = scratch("roundtrip.wav");
  const auto v = sine(1234, 1000.0, 16000);
  write_wav(p, v);
  const AudioSegment s = load_audio(p);
  REQUIRE(s.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(s.samples[i] - v[i]) <= 1.0 / 32768.0);
}

TEST_CASE("random_crop") {
  Rng rng(3);
  SUBCASE("equal length is the identity") {
    const AudioSegment s = ramp(32000);
    CHECK(random_crop(s, 32000, rng).samples == s.samples);
  }
  SUBCASE("longer input: contiguous window inside the valid offset range") {
    const AudioSegment s = ramp(48000);
    std::vector<float> full(48000);
    for (std::size_t i = 0; i < full.size(); ++i) full[i] = static_cast<float>(i);
    AudioSegment idx = s;
    idx.samples = full;
    for (int k = 0; k < 20; ++k) {
      const AudioSegment c = random_crop(idx, 32000, rng);
      REQUIRE(c.size() == 32000);
      const auto off = static_cast<std::size_t>(c.samples[0]);
      CHECK(off <= 16000);
      for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(c.samples[i] == full[off + i]);
    }
  }
  SUBCASE("same seed is bitwise reproducible") {
    const AudioSegment s = ramp(48000);
    Rng a(11), b(11);
    CHECK(random_crop(s, 20000, a).samples == random_crop(s, 20000, b).samples);
  }
  SUBCASE("short input is wrap padded") {
    const AudioSegment s = ramp(16000);
    const AudioSegment c = random_crop(s, 32000, rng);
    REQUIRE(c.size() == 32000);
    for (std::size_t i = 0; i < 16000; ++i) {
      REQUIRE(c.samples[i] == s.samples[i]);
      REQUIRE(c.samples[i + 16000] == s.samples[i]);
    }
  }
}

TEST_CASE("middle_crop") {
  SUBCASE("1 s out of 80000 samples") {
    AudioSegment s = ramp(80000);
    for (std::size_t i = 0; i < s.size(); ++i) s.samples[i] = static_cast<float>(i);
    const AudioSegment c = middle_crop(s, 1.0);
    REQUIRE(c.size() == 16000);
    CHECK(c.samples.front() == 32000.0f);
    CHECK(c.samples.back() == 47999.0f);
  }
  SUBCASE("shorter input returned whole") {
    const AudioSegment s = ramp(32000);
    CHECK(middle_crop(s, 5.0).samples == s.samples);
  }
  SUBCASE("odd remainder takes the floor") {
    AudioSegment s = ramp(32001);
    for (std::size_t i = 0; i < s.size(); ++i) s.samples[i] = static_cast<float>(i);
    const AudioSegment c = middle_crop(s, 2.0);
    REQUIRE(c.size() == 32000);
    CHECK(c.samples.front() == 0.0f);
  }
  SUBCASE("prefix + crop + suffix reconstructs the input") {
    for (std::size_t n : {16001u, 40000u, 77777u}) {
      AudioSegment s = ramp(n);
      const AudioSegment c = middle_crop(s, 1.3);
      const std::size_t off = (n - c.size()) / 2;
      std::vector<float> joined(s.samples.begin(), s.samples.begin() + off);
      joined.insert(joined.end(), c.samples.begin(), c.samples.end());
      joined.insert(joined.end(), s.samples.begin() + off + c.size(), s.samples.end());
      CHECK(joined == s.samples);
    }
  }
}

TEST_CASE("augment") {
  const AudioSegment s = ramp(32000);
  Rng rng(5);
  SUBCASE("disabled policy is the identity") {
    AugmentPolicy p;
    CHECK(p.disabled());
    for (int k = 0; k < 5; ++k) CHECK(augment(s, p, rng).samples == s.samples);
  }
  SUBCASE("speed factor 1.0 is the identity") {
    AugmentPolicy p;
    p.speed_factors = {1.0};
    for (int k = 0; k < 10; ++k) CHECK(augment(s, p, rng).samples == s.samples);
    CHECK(speed_perturb(s, 1.0).samples == s.samples);
  }
  SUBCASE("noise at infinite SNR is the identity") {
    AudioSegment noise = ramp(5000);
    CHECK(add_noise(s, noise, std::numeric_limits<double>::infinity(), rng).samples == s.samples);
  }
  SUBCASE("speed perturbation length is round(L / f)") {
    CHECK(speed_perturb(s, 0.9).size() == 35556);
    for (double f : {0.9, 0.95, 1.05, 1.1})
      for (std::size_t n : {16000u, 32000u, 32001u, 47999u}) {
        const auto out = speed_perturb(ramp(n), f).size();
        CHECK(out == static_cast<std::size_t>(std::floor(n / f + 0.5)));
      }
  }
  SUBCASE("noise is mixed at the requested SNR") {
    AudioSegment noise;
    noise.samples = sine(32000, 3000.0, 16000);
    const AudioSegment clean{sine(32000, 300.0, 16000)};
    const AudioSegment mixed = add_noise(clean, noise, 10.0, rng);
    double ps = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      ps += double(clean.samples[i]) * clean.samples[i];
      const double d = double(mixed.samples[i]) - clean.samples[i];
      pn += d * d;
    }
    CHECK(10.0 * std::log10(ps / pn) == doctest::Approx(10.0).epsilon(1e-3));
  }
}

TEST_CASE("resampled_length rounds half up") {
  CHECK(resampled_length(3, 1, 2) == 2);   // 1.5 -> 2
  CHECK(resampled_length(5, 1, 2) == 3);   // 2.5 -> 3
  CHECK(resampled_length(32000, 10, 9) == 35556);
}

TEST_CASE("parse_trials") {
  std::istringstream ok("1 a.wav b.wav\n\n0 a.wav c.wav\n");
  const TrialList t = parse_trials(ok);
  REQUIRE(t.size() == 2);
  CHECK(t[0].is_target);
  CHECK(t[0].enroll_id == "a.wav");
  CHECK(t[0].test_id == "b.wav");
  CHECK_FALSE(t[1].is_target);
  CHECK(t[1].test_id == "c.wav");

  std::istringstream bad("2 a.wav b.wav\n");
  CHECK_THROWS_WITH_AS(parse_trials(bad), "invalid label at line 1", Error);
  std::istringstream short_line("1 a.wav\n");
  CHECK_THROWS_AS(parse_trials(short_line), Error);
}

TEST_CASE("manifest csv roundtrip and lookup") {
  const auto dir = scratch("manifest_dir");
  std::filesystem::create_directories(dir);
  write_wav(dir / "x.wav", sine(16000, 200.0, 16000));
  write_wav(dir / "y.wav", sine(8000, 200.0, 16000));
  Manifest m({{"x", "spkB", "x.wav", 1.0}, {"y", "spkA", "y.wav", 0.5}});
  m.write_csv(dir / "m.csv");
  const Manifest r = Manifest::read_csv(dir / "m.csv");
  REQUIRE(r.size() == 2);
  CHECK(r.speakers() == std::vector<std::string>{"spkA", "spkB"});
  CHECK(r.speaker_index().at("spkB") == 1);
  CHECK(r.load(r.at("y")).size() == 8000);
  CHECK(r.resolve("x.wav") != nullptr);
  CHECK_THROWS_WITH_AS(r.at("nope"), doctest::Contains("nope"), Error);

  TrialList trials{{true, "x", "y"}, {false, "x", "ghost"}};
  CHECK_THROWS_WITH_AS(check_trials_resolvable(trials, r), doctest::Contains("ghost"), Error);
}
