#include "mrsv/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace mrsv {

namespace {

constexpr double kSigmaFloor = 1e-8;

void check_labels(std::size_t n_scores, const std::vector<bool>& is_target) {
  if (n_scores != is_target.size()) throw Error("scores and labels differ in length");
  const auto targets = std::count(is_target.begin(), is_target.end(), true);
  if (targets == 0 || targets == static_cast<long>(is_target.size()))
    throw Error("degenerate label set: need at least one target and one non-target");
}

// Mean and population sigma of the k largest values.
std::pair<double, double> top_k_stats(std::span<const double> v, int k) {
  std::vector<double> top(k);
  std::partial_sort_copy(v.begin(), v.end(), top.begin(), top.end(), std::greater<>());
  const double mean = std::accumulate(top.begin(), top.end(), 0.0) / k;
  double var = 0.0;
  for (double x : top) var += (x - mean) * (x - mean);
  return {mean, std::max(std::sqrt(var / k), kSigmaFloor)};
}

using CacheKey = std::pair<std::string, double>;

struct EmbeddingCache {
  std::map<CacheKey, Embedding> embeddings;
  std::map<CacheKey, std::vector<double>> cohort_scores;

  // Computes every missing key, optionally on several threads.
  void fill(const std::vector<CacheKey>& keys, const SegmentSource& source,
            const Embedder& embedder, int threads) {
    std::vector<CacheKey> todo;
    std::set<CacheKey> queued;
    for (const auto& k : keys)
      if (!embeddings.count(k) && queued.insert(k).second) todo.push_back(k);
    std::vector<Embedding> out(todo.size());
    auto work = [&](std::size_t begin, std::size_t stride) {
      for (std::size_t i = begin; i < todo.size(); i += stride) {
        const AudioSegment seg = source(todo[i].first);
        out[i] = embedder(todo[i].second > 0.0 ? middle_crop(seg, todo[i].second) : seg);
      }
    };
    const std::size_t n = std::max(1, threads);
    if (n == 1 || todo.size() < 2) {
      work(0, 1);
    } else {
      std::vector<std::thread> pool;
      std::exception_ptr failure;
      std::mutex m;
      for (std::size_t t = 0; t < n; ++t)
        pool.emplace_back([&, t] {
          try {
            work(t, n);
          } catch (...) {
            std::lock_guard lock(m);
            if (!failure) failure = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      if (failure) std::rethrow_exception(failure);
    }
    for (std::size_t i = 0; i < todo.size(); ++i) embeddings.emplace(todo[i], std::move(out[i]));
  }

  const std::vector<double>& cohort_for(const CacheKey& key, const Cohort& cohort) {
    auto it = cohort_scores.find(key);
    if (it != cohort_scores.end()) return it->second;
    std::vector<double> s;
    s.reserve(cohort.embeddings.size());
    for (const auto& c : cohort.embeddings) s.push_back(cosine_score(embeddings.at(key), c));
    return cohort_scores.emplace(key, std::move(s)).first->second;
  }
};

ScoreSet score_cached(const TrialList& trials, const SegmentSource& source,
                      const Embedder& embedder, double enroll_d, double test_d,
                      const ScoringOptions& opt, EmbeddingCache& cache) {
  if (opt.cohort && (opt.top_k < 2 || opt.top_k > static_cast<int>(opt.cohort->embeddings.size())))
    throw Error("AS-norm top-K " + std::to_string(opt.top_k) + " out of range for cohort of " +
                std::to_string(opt.cohort->embeddings.size()));
  std::vector<CacheKey> keys;
  for (const auto& t : trials) {
    keys.emplace_back(t.enroll_id, enroll_d);
    keys.emplace_back(t.test_id, test_d);
  }
  cache.fill(keys, source, embedder, opt.threads);

  ScoreSet out;
  out.trials = trials;
  if (opt.cohort) out.normalized.emplace();
  for (const auto& t : trials) {
    const CacheKey ek{t.enroll_id, enroll_d}, tk{t.test_id, test_d};
    const double raw = cosine_score(cache.embeddings.at(ek), cache.embeddings.at(tk));
    out.raw.push_back(raw);
    if (opt.cohort)
      out.normalized->push_back(as_norm(raw, cache.cohort_for(ek, *opt.cohort),
                                        cache.cohort_for(tk, *opt.cohort), opt.top_k));
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

double cosine_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine score: embedding sizes differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error("zero-norm embedding");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

double as_norm(double raw, std::span<const double> enroll_cohort,
               std::span<const double> test_cohort, int top_k) {
  if (top_k < 2 || top_k > static_cast<int>(enroll_cohort.size()) ||
      top_k > static_cast<int>(test_cohort.size()))
    throw Error("AS-norm top-K " + std::to_string(top_k) + " out of range");
  const auto [me, se] = top_k_stats(enroll_cohort, top_k);
  const auto [mt, st] = top_k_stats(test_cohort, top_k);
  return 0.5 * ((raw - me) / se + (raw - mt) / st);
}

void DCFConfig::validate() const {
  if (!(p_target > 0.0 && p_target < 1.0)) throw ConfigError("dcf: p_target must lie in (0, 1)");
  if (!(c_fa > 0.0 && c_miss > 0.0)) throw ConfigError("dcf: costs must be positive");
}

std::vector<OperatingPoint> operating_points(std::span<const double> scores,
                                             const std::vector<bool>& is_target) {
  check_labels(scores.size(), is_target);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  const auto n_target = static_cast<double>(std::count(is_target.begin(), is_target.end(), true));
  const auto n_non = static_cast<double>(scores.size()) - n_target;

  std::vector<OperatingPoint> points;
  long misses = 0, false_alarms = static_cast<long>(n_non);
  points.push_back({false_alarms / n_non, misses / n_target});
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (is_target[order[i]])
        ++misses;
      else
        --false_alarms;
    }
    points.push_back({false_alarms / n_non, misses / n_target});
  }
  return points;
}

double compute_eer(std::span<const double> scores, const std::vector<bool>& is_target) {
  const auto points = operating_points(scores, is_target);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = points[i].frr - points[i].far;
    if (d == 0.0) return points[i].far;
    if (d > 0.0) {
      const auto& p = points[i - 1];
      const double dp = p.frr - p.far;
      const double t = dp / (dp - d);
      return p.far + t * (points[i].far - p.far);
    }
  }
  return points.back().far;  // unreachable: the last point has FRR = 1, FAR = 0
}

double compute_min_dcf(std::span<const double> scores, const std::vector<bool>& is_target,
                       const DCFConfig& cfg) {
  cfg.validate();
  const auto points = operating_points(scores, is_target);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : points)
    best = std::min(best, cfg.c_miss * p.frr * cfg.p_target + cfg.c_fa * p.far * (1.0 - cfg.p_target));
  return best / std::min(cfg.c_miss * cfg.p_target, cfg.c_fa * (1.0 - cfg.p_target));
}

DurationGrid DurationGrid::parse(const std::string& text) {
  DurationGrid grid;
  grid.durations.clear();
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok == "full") {
      grid.durations.push_back(0.0);
      continue;
    }
    double d = 0.0;
    std::size_t used = 0;
    try {
      d = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty() || !(d > 0.0) || !std::isfinite(d))
      throw ConfigError("invalid duration '" + tok + "' (positive seconds or 'full')");
    grid.durations.push_back(d);
  }
  if (grid.durations.empty()) throw ConfigError("empty duration grid");
  return grid;
}

std::string DurationGrid::label(double duration) {
  if (duration <= 0.0) return "full";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", duration);
  return buf;
}

std::map<std::string, std::vector<std::string>> utterances_by_speaker(const Manifest& manifest) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& e : manifest.entries()) out[e.speaker_id].push_back(e.utterance_id);
  return out;
}

std::map<std::string, std::vector<std::string>> utterances_by_speaker(
    const std::vector<AudioSegment>& segments) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& s : segments) {
    if (!s.speaker_id) throw Error("cohort: segment " + s.utterance_id + " has no speaker id");
    out[*s.speaker_id].push_back(s.utterance_id);
  }
  return out;
}

Cohort build_cohort(const std::map<std::string, std::vector<std::string>>& by_speaker,
                    const SegmentSource& source, const Embedder& embedder,
                    const CohortConfig& cfg) {
  if (cfg.size <= 0) throw Error("empty cohort");
  if (cfg.size > static_cast<int>(by_speaker.size()))
    throw Error("insufficient speakers for cohort: need " + std::to_string(cfg.size) + ", have " +
                std::to_string(by_speaker.size()));
  std::vector<std::string> speakers;
  for (const auto& kv : by_speaker) speakers.push_back(kv.first);
  Rng rng(derive_seed(cfg.seed, "cohort"));
  std::shuffle(speakers.begin(), speakers.end(), rng);
  speakers.resize(cfg.size);

  Cohort cohort;
  for (const auto& spk : speakers) {
    const auto& ids = by_speaker.at(spk);
    const std::size_t n = cfg.utterances_per_speaker > 0
                              ? std::min<std::size_t>(ids.size(), cfg.utterances_per_speaker)
                              : ids.size();
    Embedding mean;
    for (std::size_t i = 0; i < n; ++i) {
      const Embedding e = embedder(source(ids[i]));
      double norm = 0.0;
      for (double v : e) norm += v * v;
      norm = std::sqrt(norm);
      if (norm == 0.0) throw Error("zero-norm embedding");
      if (mean.empty()) mean.assign(e.size(), 0.0);
      for (std::size_t j = 0; j < e.size(); ++j) mean[j] += e[j] / norm;
    }
    cohort.speakers.push_back(spk);
    cohort.embeddings.push_back(std::move(mean));
  }
  return cohort;
}

std::vector<bool> ScoreSet::labels() const {
  std::vector<bool> out;
  out.reserve(trials.size());
  for (const auto& t : trials) out.push_back(t.is_target);
  return out;
}

ScoreSet score_trials(const TrialList& trials, const SegmentSource& source,
                      const Embedder& embedder, double enroll_duration, double test_duration,
                      const ScoringOptions& opt) {
  EmbeddingCache cache;
  return score_cached(trials, source, embedder, enroll_duration, test_duration, opt, cache);
}

std::vector<MetricsRow> short_segment_eval(const TrialList& trials, const SegmentSource& source,
                                           const Embedder& embedder, const DurationGrid& grid,
                                           const DCFConfig& dcf, const ScoringOptions& opt) {
  dcf.validate();
  EmbeddingCache cache;
  std::vector<MetricsRow> rows;
  for (double d : grid.durations) {
    MetricsRow row;
    row.duration = DurationGrid::label(d);
    std::vector<ScoreSet> runs;
    if (d <= 0.0) {
      runs.push_back(score_cached(trials, source, embedder, 0.0, 0.0, opt, cache));
    } else {
      runs.push_back(score_cached(trials, source, embedder, 0.0, d, opt, cache));
      runs.push_back(score_cached(trials, source, embedder, d, 0.0, opt, cache));
    }
    const double n = static_cast<double>(runs.size());
    for (const ScoreSet& s : runs) {
      const std::vector<bool> labels = s.labels();
      row.eer += compute_eer(s.raw, labels) / n;
      row.min_dcf += compute_min_dcf(s.raw, labels, dcf) / n;
      if (s.normalized) {
        row.eer_norm = row.eer_norm.value_or(0.0) + compute_eer(*s.normalized, labels) / n;
        row.min_dcf_norm =
            row.min_dcf_norm.value_or(0.0) + compute_min_dcf(*s.normalized, labels, dcf) / n;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  const bool norm = !rows.empty() && rows.front().eer_norm.has_value();
  out << "duration,eer,min_dcf" << (norm ? ",eer_asnorm,min_dcf_asnorm" : "") << '\n';
  for (const auto& r : rows) {
    out << r.duration << ',' << format_double(r.eer) << ',' << format_double(r.min_dcf);
    if (norm)
      out << ',' << format_double(r.eer_norm.value_or(0.0)) << ','
          << format_double(r.min_dcf_norm.value_or(0.0));
    out << '\n';
  }
}

void write_score_file(std::ostream& out, const ScoreSet& scores) {
  for (std::size_t i = 0; i < scores.trials.size(); ++i) {
    out << scores.trials[i].enroll_id << ' ' << scores.trials[i].test_id << ' '
        << format_double(scores.raw[i]);
    if (scores.normalized) out << ' ' << format_double((*scores.normalized)[i]);
    out << '\n';
  }
}

SegmentSource manifest_source(const Manifest& manifest) {
  return [&manifest](const std::string& id) { return manifest.load(manifest.at(id)); };
}

SegmentSource memory_source(const std::vector<AudioSegment>& segments) {
  auto index = std::make_shared<std::map<std::string, const AudioSegment*>>();
  for (const auto& s : segments) index->emplace(s.utterance_id, &s);
  return [index](const std::string& id) {
    const auto it = index->find(id);
    if (it == index->end()) throw Error("unresolved utterance id: " + id);
    return *it->second;
  };
}

}  // namespace mrsv
