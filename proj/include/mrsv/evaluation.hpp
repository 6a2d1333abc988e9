// Cosine scoring, adaptive s-norm, EER / minDCF and the middle-crop
// short-segment protocol.
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mrsv/audio.hpp"
#include "mrsv/dataset.hpp"

namespace mrsv {

using Embedding = std::vector<double>;
using Embedder = std::function<Embedding(const AudioSegment&)>;
using SegmentSource = std::function<AudioSegment(const std::string& id)>;

double cosine_score(std::span<const double> a, std::span<const double> b);

// Top-K adaptive s-norm: statistics over the K largest cohort scores of
// each side, population sigma floored at 1e-8, averaged over both sides.
double as_norm(double raw, std::span<const double> enroll_cohort,
               std::span<const double> test_cohort, int top_k);

struct DCFConfig {
  double p_target = 0.05;
  double c_fa = 1.0;
  double c_miss = 1.0;
  void validate() const;
};

// Operating points for accept-if-score >= threshold, with thresholds at
// -inf, every midpoint between consecutive distinct scores, and +inf, in
// increasing threshold order.
struct OperatingPoint {
  double far;
  double frr;
};
std::vector<OperatingPoint> operating_points(std::span<const double> scores,
                                             const std::vector<bool>& is_target);

// Linear interpolation between the bracketing points where FRR - FAR
// changes sign.
double compute_eer(std::span<const double> scores, const std::vector<bool>& is_target);
// Normalized by min(c_miss * p_target, c_fa * (1 - p_target)).
double compute_min_dcf(std::span<const double> scores, const std::vector<bool>& is_target,
                       const DCFConfig& cfg = {});

// Durations in seconds; 0 stands for the full utterance.
struct DurationGrid {
  std::vector<double> durations{0.0};
  // Comma separated, e.g. "full,5,2,1.5".
  static DurationGrid parse(const std::string& text);
  static std::string label(double duration);
};

struct Cohort {
  std::vector<std::string> speakers;
  std::vector<Embedding> embeddings;  // unit-norm mean per speaker
};

struct CohortConfig {
  int size = 0;                     // speakers; must be >= 1
  int utterances_per_speaker = 5;   // 0: all
  std::uint64_t seed = 0;
};

std::map<std::string, std::vector<std::string>> utterances_by_speaker(const Manifest& manifest);
std::map<std::string, std::vector<std::string>> utterances_by_speaker(
    const std::vector<AudioSegment>& segments);

// Samples cfg.size speakers and averages unit-normalized embeddings of up
// to utterances_per_speaker of their utterances (full length).
Cohort build_cohort(const std::map<std::string, std::vector<std::string>>& by_speaker,
                    const SegmentSource& source, const Embedder& embedder,
                    const CohortConfig& cfg);

struct ScoreSet {
  TrialList trials;
  std::vector<double> raw;
  std::optional<std::vector<double>> normalized;

  std::vector<bool> labels() const;
  // Normalized scores when present, raw otherwise.
  const std::vector<double>& effective() const { return normalized ? *normalized : raw; }
};

struct ScoringOptions {
  const Cohort* cohort = nullptr;  // enables AS-norm
  int top_k = 200;
  int threads = 1;
};

// Embeds every distinct id once (middle-cropped to enroll/test durations,
// 0 = full) and scores the trials in order.
ScoreSet score_trials(const TrialList& trials, const SegmentSource& source,
                      const Embedder& embedder, double enroll_duration, double test_duration,
                      const ScoringOptions& opt = {});

struct MetricsRow {
  std::string duration;
  double eer = 0.0;
  double min_dcf = 0.0;
  // Filled when a cohort is configured.
  std::optional<double> eer_norm;
  std::optional<double> min_dcf_norm;
};

// Per duration d: mean of (full enroll, d test) and (d enroll, full test);
// "full" runs once.  Embeddings are cached across the grid.  Raw scores
// always give eer/min_dcf; with a cohort the AS-norm columns are added.
std::vector<MetricsRow> short_segment_eval(const TrialList& trials, const SegmentSource& source,
                                           const Embedder& embedder, const DurationGrid& grid,
                                           const DCFConfig& dcf, const ScoringOptions& opt = {});

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void write_score_file(std::ostream& out, const ScoreSet& scores);

// SegmentSource over a manifest, loading from disk.
SegmentSource manifest_source(const Manifest& manifest);
// SegmentSource over in-memory segments keyed by utterance id.
SegmentSource memory_source(const std::vector<AudioSegment>& segments);

}  // namespace mrsv
