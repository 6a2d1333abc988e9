#include "mrsv/toy_corpus.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace mrsv {

namespace {

struct Band {
  double center_hz;
  double q;
  double gain_db;
};

// RBJ band-pass (0 dB peak) applied in place.
void bandpass(const std::vector<double>& in, const Band& b, double gain, std::vector<double>& acc) {
  const double w0 = 2.0 * std::numbers::pi * b.center_hz / kSampleRate;
  const double alpha = std::sin(w0) / (2.0 * b.q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (std::size_t n = 0; n < in.size(); ++n) {
    const double y = b0 * in[n] + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = in[n];
    y2 = y1;
    y1 = y;
    acc[n] += gain * y;
  }
}

std::string speaker_name(int s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%02d", s);
  return buf;
}

}  // namespace

ToyCorpus make_toy_corpus(const ToyCorpusOptions& opt) {
  if (opt.num_speakers < 2 || opt.utts_per_speaker < 1 || opt.heldout_per_speaker < 0 ||
      opt.heldout_per_speaker > opt.utts_per_speaker || opt.bands_per_speaker < 1 ||
      !(opt.min_seconds > 0.0 && opt.max_seconds >= opt.min_seconds))
    throw ConfigError("toy corpus: invalid options");

  Rng rng(derive_seed(opt.seed, "toy-corpus"));
  std::uniform_real_distribution<double> log_center(std::log(200.0), std::log(6000.0));
  std::uniform_real_distribution<double> q_dist(3.0, 8.0);
  std::uniform_real_distribution<double> gain_dist(-12.0, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  ToyCorpus corpus;
  for (int s = 0; s < opt.num_speakers; ++s) {
    std::vector<Band> bands;
    for (int b = 0; b < opt.bands_per_speaker; ++b)
      bands.push_back({std::exp(log_center(rng)), q_dist(rng), gain_dist(rng)});

    for (int u = 0; u < opt.utts_per_speaker; ++u) {
      const double seconds = opt.min_seconds + (opt.max_seconds - opt.min_seconds) * unit(rng);
      const auto n = static_cast<std::size_t>(std::lround(seconds * kSampleRate));
      std::vector<double> noise(n);
      for (auto& v : noise) v = normal(rng);

      std::vector<double> y(n, 0.0);
      for (const Band& b : bands) {
        const Band jittered{b.center_hz * (1.0 + 0.02 * normal(rng)), b.q,
                            b.gain_db + 1.5 * normal(rng)};
        bandpass(noise, jittered, std::pow(10.0, jittered.gain_db / 20.0), y);
      }
      const double rate = 2.0 + 4.0 * unit(rng);
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const double level = 0.05 + 0.25 * unit(rng);
      double peak = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double env =
            0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * rate * i / kSampleRate + phase);
        y[i] = env * y[i] + 0.05 * noise[(i * 7919) % n];
        peak = std::max(peak, std::abs(y[i]));
      }

      AudioSegment seg;
      seg.sample_rate = kSampleRate;
      seg.speaker_id = speaker_name(s);
      char id[32];
      std::snprintf(id, sizeof id, "%s_u%02d", seg.speaker_id->c_str(), u);
      seg.utterance_id = id;
      seg.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) seg.samples[i] = static_cast<float>(level * y[i] / peak);

      const bool held = u >= opt.utts_per_speaker - opt.heldout_per_speaker;
      (held ? corpus.heldout : corpus.train).push_back(std::move(seg));
      (held ? corpus.heldout_labels : corpus.train_labels).push_back(s);
    }
  }
  return corpus;
}

TrialList all_pair_trials(const std::vector<AudioSegment>& utterances) {
  TrialList trials;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    for (std::size_t j = i + 1; j < utterances.size(); ++j)
      trials.push_back({utterances[i].speaker_id == utterances[j].speaker_id,
                        utterances[i].utterance_id, utterances[j].utterance_id});
  return trials;
}

void write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "wav");
  auto dump = [&](const std::vector<AudioSegment>& segs, const std::string& name) {
    std::vector<ManifestEntry> entries;
    for (const auto& s : segs) {
      const std::filesystem::path rel = std::filesystem::path("wav") / (s.utterance_id + ".wav");
      write_wav(dir / rel, s.samples, s.sample_rate);
      entries.push_back({s.utterance_id, *s.speaker_id, rel, s.duration()});
    }
    // Manifest paths stay relative so the corpus directory can move.
    std::ofstream out(dir / name);
    out << "utterance_id,speaker_id,path,duration_s\n";
    out.precision(10);
    for (const auto& e : entries)
      out << e.utterance_id << ',' << e.speaker_id << ',' << e.path.string() << ','
          << e.duration_s << '\n';
  };
  dump(corpus.train, "train.csv");
  dump(corpus.heldout, "eval.csv");
  write_trials(dir / "trials.txt", all_pair_trials(corpus.heldout));
}

}  // namespace mrsv
