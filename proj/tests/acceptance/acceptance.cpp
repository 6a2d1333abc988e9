// End-to-end acceptance checks.  Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.  Arguments select criteria by
// number; no arguments runs all of them.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../common/metric_oracle.hpp"
#include "../common/toy_setup.hpp"
#include "mrsv/cli.hpp"
#include "mrsv/evaluation.hpp"
#include "mrsv/fbank.hpp"
#include "mrsv/mre.hpp"
#include "mrsv/nn/ops.hpp"
#include "mrsv/toy_corpus.hpp"

using namespace mrsv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double max_abs_diff(const nn::Tensor& a, const nn::Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<AudioSegment> noise_batch(int n, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<AudioSegment> out(n);
  for (auto& s : out) {
    s.samples.resize(len);
    for (auto& v : s.samples) v = static_cast<float>(g(rng));
  }
  return out;
}

// 1: frame geometry of the multi-resolution encoder.
Outcome geometry() {
  Outcome o;
  MREConfig cfg;
  cfg.encoder_kernels = 8;
  cfg.tcn_channels = 8;
  cfg.out_channels = 4;
  cfg = validate_config(cfg);
  if (cfg.aligner_kernels != std::vector<int>{16, 8, 4, 2}) {
    o.pass = false;
    o.detail += "aligner kernels wrong; ";
  }
  Rng rng(1);
  for (std::size_t len : {16000u, 24000u, 32000u}) {
    const nn::Tensor x = waveform_batch(noise_batch(1, len, len));
    for (int n = 0; n < cfg.num_encoders(); ++n) {
      const SingleResolutionEncoder e(cfg, n, rng);
      if (e.forward(x).dim(2) != static_cast<int>(len / 200)) {
        o.pass = false;
        o.detail += "encoder " + std::to_string(n) + " off grid at " + std::to_string(len) + "; ";
      }
    }
  }
  // Accepted exactly when every shift divides the frame shift.
  int accepted = 0, mismatches = 0;
  for (int fs = 1; fs <= 800; ++fs) {
    MREConfig c = cfg;
    c.frame_shift = fs;
    bool ok = true;
    try {
      validate_config(c);
    } catch (const ConfigError&) {
      ok = false;
    }
    bool expect = true;
    for (int s : c.shifts) expect = expect && fs % s == 0;
    accepted += ok;
    mismatches += ok != expect;
  }
  if (mismatches) {
    o.pass = false;
    o.detail += std::to_string(mismatches) + " frame shifts misjudged; ";
  }
  o.detail += "M={16,8,4,2}, T'=L/200 for 1-2 s, " + std::to_string(accepted) +
              " of 800 frame shifts accepted";
  return o;
}

// 2: fresh adapters collapse S4 -> S3 and S2 -> S1.
Outcome variant_collapse() {
  const auto ptm = testutil::toy_ptm();
  const auto x = noise_batch(4, 32000, 2);
  double worst = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s4 = testutil::toy_model("S4", seed, ptm), s3 = testutil::toy_model("S3", seed, ptm);
    const auto s2 = testutil::toy_model("S2", seed, ptm), s1 = testutil::toy_model("S1", seed, ptm);
    worst = std::max(worst, max_abs_diff(s4->forward(x, false), s3->forward(x, false)));
    worst = std::max(worst, max_abs_diff(s2->forward(x, false), s1->forward(x, false)));
  }
  return {worst < 1e-6, "max |dS4S3|, |dS2S1| = " + fmt("%.3g", worst) + " (tol 1e-6)"};
}

ToyCorpus small_corpus() {
  ToyCorpusOptions o;
  o.num_speakers = 6;
  o.utts_per_speaker = 6;
  o.heldout_per_speaker = 2;
  return make_toy_corpus(o);
}

// 3: ten steps leave the PTM untouched and move every trainable group.
Outcome frozen_ptm() {
  const auto ptm = testutil::toy_ptm();
  const auto m = testutil::toy_model("S4", 4, ptm);
  const nlohmann::json before = model_checksums(*m);
  const ToyCorpus c = small_corpus();
  TrainOptions opt = testutil::toy_train_options(4);
  opt.batch_size = 8;
  opt.max_steps = 10;
  Trainer t(*m, opt);
  t.run(TrainingSet::from_segments(c.train, c.train_labels));
  const nlohmann::json after = model_checksums(*m);
  Outcome o;
  o.pass = before["ptm"] == after["ptm"] && after["groups"].size() == 5;
  std::string moved;
  for (const auto& [name, sum] : after["groups"].items()) {
    const bool changed = before["groups"][name] != sum;
    o.pass = o.pass && changed;
    moved += name + (changed ? "=changed " : "=UNCHANGED ");
  }
  if (!moved.empty()) moved.pop_back();
  o.detail = "ptm " + std::string(before["ptm"] == after["ptm"] ? "unchanged" : "CHANGED") +
             "; " + moved;
  return o;
}

// 4: EER / minDCF against the exhaustive sweep.
Outcome metric_oracle() {
  Outcome o;
  int exact = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(1000 + seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::bernoulli_distribution b(0.25);
    std::vector<double> s;
    std::vector<bool> t;
    for (int i = 0; i < 1000; ++i) {
      t.push_back(i == 0 || (i != 1 && b(rng)));
      double v = g(rng) + (t.back() ? 2.0 : 0.0);
      if (seed % 3 == 0) v = std::round(v * 10.0) / 10.0;
      s.push_back(v);
    }
    const auto ref = testutil::brute_force_metrics(s, t, 0.05);
    exact += compute_eer(s, t) == ref.eer && compute_min_dcf(s, t) == ref.min_dcf;
  }
  const std::vector<double> hs{0.9, 0.8, 0.7, 0.75, 0.2, 0.1};
  const std::vector<bool> hl{true, true, true, false, false, false};
  const double eer = compute_eer(hs, hl), dcf = compute_min_dcf(hs, hl);
  o.pass = exact == 20 && std::abs(eer - 1.0 / 3) < 1e-12 && std::abs(dcf - 1.0 / 3) < 1e-12;
  o.detail = std::to_string(exact) + "/20 sets exact; hand set EER " + fmt("%.6f", eer) +
             ", minDCF " + fmt("%.6f", dcf);
  return o;
}

// 5: AAM-softmax gradients by central differences.
Outcome gradient_fidelity() {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto param = [&](nn::Shape s) {
    std::vector<double> v(nn::numel(s));
    for (auto& x : v) x = u(rng);
    return nn::Tensor::parameter(std::move(s), std::move(v));
  };
  // Six embeddings, each the fusion of five layer candidates.
  const nn::Tensor layers = param({5, 6, 8});
  FusionWeights fusion(5);
  for (auto& v : fusion.raw.mutable_data()) v = u(rng);
  const nn::Tensor emb = param({6, 8});
  const nn::Tensor w = param({4, 8});
  const std::vector<int> labels{0, 1, 2, 3, 2, 0};
  LossConfig cfg;  // m = 0.2, s = 30

  auto through_fusion = [&] { return aam_softmax_loss(fuse_layers(layers, fusion), w, labels, cfg); };
  auto direct = [&] { return aam_softmax_loss(emb, w, labels, cfg); };

  double worst = 0.0, max_abs_tiny = 0.0;
  int checked = 0, tiny = 0;
  auto check = [&](const std::function<nn::Tensor()>& f, nn::Tensor leaf) {
    for (nn::Tensor p : {layers, fusion.raw, emb, w}) p.zero_grad();
    f().backward();
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto data = leaf.mutable_data();
    const double h = 1e-6;
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f().item();
      data[i] = saved - h;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double mag = std::max(std::abs(numeric), std::abs(analytic[i]));
      // Entries below the central-difference noise floor cannot carry a
      // meaningful relative error; they are bounded absolutely instead.
      if (mag < 1e-7) {
        ++tiny;
        max_abs_tiny = std::max(max_abs_tiny, std::abs(numeric - analytic[i]));
        continue;
      }
      worst = std::max(worst, std::abs(numeric - analytic[i]) / mag);
      ++checked;
    }
  };
  check(direct, emb);
  check(through_fusion, fusion.raw);
  check(through_fusion, layers);
  check(direct, w);
  Outcome o;
  o.pass = worst < 1e-4 && max_abs_tiny < 1e-9;
  o.detail = "max rel err " + fmt("%.3g", worst) + " over " + std::to_string(checked) +
             " entries (tol 1e-4); " + std::to_string(tiny) + " sub-1e-7 entries, max abs err " +
             fmt("%.2g", max_abs_tiny);
  return o;
}

// 6: learning-rate schedule.
Outcome schedule() {
  ScheduleConfig cfg;
  const long per = 1000;
  bool ok = true;
  std::string peaks;
  for (int k = 0; k < cfg.cycles; ++k) {
    ok = ok && lr_at(k * per, per, cfg) == cfg.lr_min;
    const double peak = lr_at(k * per + per / 2, per, cfg);
    ok = ok && std::abs(peak - 1e-3 / std::pow(2.0, k)) <= 1e-18;
    peaks += fmt("%.4g ", peak);
  }
  ok = ok && lr_at(cfg.cycles * per, per, cfg) == cfg.lr_min;
  return {ok, "peaks " + peaks + "boundaries 1e-08"};
}

// 7: every branch on one D x 99 grid for 2 s of audio.
Outcome frame_grid() {
  const auto ptm = testutil::toy_ptm();
  const auto batch = noise_batch(2, 32000, 7);
  const int fb = compute_fbank(batch[0]).num_frames();
  const int pf = ptm->extract(batch[0]).num_frames();
  const auto m = testutil::toy_model("S4", 7, ptm);
  const auto f = m->features(batch, false);
  const nn::Shape grid{2, ptm->dim(), 99};
  Outcome o;
  o.pass = fb == 198 && pf == 99 && f.z_cond.dim(2) == 160 && f.z_ds.dim(2) == 99 &&
           f.ptm.shape() == grid && f.fbank.shape() == grid && f.input.shape() == grid;
  o.detail = "fbank " + std::to_string(fb) + ", ptm " + std::to_string(pf) + ", mre " +
             std::to_string(f.z_cond.dim(2)) + "->" + std::to_string(f.z_ds.dim(2)) +
             ", input [" + std::to_string(f.input.dim(0)) + "," + std::to_string(f.input.dim(1)) +
             "," + std::to_string(f.input.dim(2)) + "]";
  return o;
}

struct ToyRun {
  double eer_full = 0.0;
  double eer_1s = 0.0;
  std::vector<double> block_means;
  std::vector<double> layer_weights;
  double seconds = 0.0;
};

const ToyCorpus& toy_corpus() {
  static const ToyCorpus c = make_toy_corpus({});  // 20 speakers x 50, 10 held out each
  return c;
}

ToyRun toy_run(const std::string& variant, std::uint64_t seed) {
  static std::map<std::pair<std::string, std::uint64_t>, ToyRun> cache;
  const auto key = std::make_pair(variant, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const auto t0 = std::chrono::steady_clock::now();
  const ToyCorpus& c = toy_corpus();
  const auto m = testutil::toy_model(variant, seed, testutil::toy_ptm());
  Trainer t(*m, testutil::toy_train_options(seed));
  const TrainResult r = t.run(TrainingSet::from_segments(c.train, c.train_labels));

  ToyRun out;
  for (std::size_t b = 0; b + 100 <= r.log.size(); b += 100) {
    double s = 0.0;
    for (std::size_t i = b; i < b + 100; ++i) s += r.log[i].loss / 100.0;
    out.block_means.push_back(s);
  }
  if (m->fusion()) out.layer_weights = m->fusion()->normalized_values();
  const auto rows = short_segment_eval(all_pair_trials(c.heldout), memory_source(c.heldout),
                                       [&](const AudioSegment& s) { return m->embed(s); },
                                       DurationGrid::parse("full,1"), {});
  out.eer_full = rows[0].eer;
  out.eer_1s = rows[1].eer;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("  [toy] %s seed %llu: EER full %.4f%%, 1 s %.4f%%, %zu steps in %.0f s\n",
              variant.c_str(), static_cast<unsigned long long>(seed), 100 * out.eer_full,
              100 * out.eer_1s, r.log.size(), out.seconds);
  if (!out.layer_weights.empty()) {
    std::printf("        layer weights");
    for (double w : out.layer_weights) std::printf(" %.4f", w);
    std::printf("\n");
  }
  std::fflush(stdout);
  return cache[key] = out;
}

// 8: toy end-to-end learning for S4.
Outcome toy_learning() {
  std::vector<double> eers;
  bool decreasing = true;
  double slowest = 0.0;
  std::string blocks;
  for (std::uint64_t seed : {1, 2, 3}) {
    const ToyRun r = toy_run("S4", seed);
    eers.push_back(r.eer_full);
    slowest = std::max(slowest, r.seconds);
    for (std::size_t i = 1; i < r.block_means.size(); ++i)
      decreasing = decreasing && r.block_means[i] < r.block_means[i - 1];
    decreasing = decreasing && r.block_means.size() >= 2;
    blocks += "[";
    for (double b : r.block_means) blocks += fmt("%.3f ", b);
    blocks.back() = ']';
  }
  const double med = median(eers);
  Outcome o;
  o.pass = med < 0.10 && decreasing && slowest < 15 * 60;
  o.detail = "median held-out EER " + fmt("%.3f%%", 100 * med) + " (< 10%); 100-step loss means " +
             blocks + (decreasing ? " decreasing" : " NOT decreasing") + "; slowest seed " +
             fmt("%.0f s", slowest);
  return o;
}

// 9: S4 vs S1 at 1 s, and distinct layer weights.
Outcome direction() {
  std::vector<double> s4, s1, linf, drift4, drift1;
  for (std::uint64_t seed : {1, 2, 3}) {
    const ToyRun a = toy_run("S4", seed), b = toy_run("S1", seed);
    s4.push_back(a.eer_1s);
    s1.push_back(b.eer_1s);
    const double uniform = 1.0 / a.layer_weights.size();
    double d = 0.0, da = 0.0, db = 0.0;
    for (std::size_t l = 0; l < a.layer_weights.size(); ++l) {
      d = std::max(d, std::abs(a.layer_weights[l] - b.layer_weights[l]));
      da = std::max(da, std::abs(a.layer_weights[l] - uniform));
      db = std::max(db, std::abs(b.layer_weights[l] - uniform));
    }
    linf.push_back(d);
    drift4.push_back(da);
    drift1.push_back(db);
  }
  const double m4 = median(s4), m1 = median(s1), ml = median(linf);
  Outcome o;
  o.pass = m4 <= m1 && ml > 0.01;
  o.detail = "median 1-s EER S4 " + fmt("%.3f%%", 100 * m4) + " vs S1 " + fmt("%.3f%%", 100 * m1) +
             "; median layer-weight Linf " + fmt("%.4f", ml) + " (> 0.01); per seed " +
             fmt("%.4f ", linf[0]) + fmt("%.4f ", linf[1]) + fmt("%.4f", linf[2]) +
             "; median drift from uniform S4 " + fmt("%.4f", median(drift4)) + ", S1 " +
             fmt("%.4f", median(drift1));
  return o;
}

// 10: deterministic training logs and evaluation output, through the CLI layer.
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "mrsv_acceptance" / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_toy_corpus(small_corpus(), dir / "corpus");
  const nlohmann::json cfg = {
      {"seed", 11},
      {"variant", "S4"},
      {"ptm", {{"kind", "stub"}, {"num_layers", 4}, {"dim", 16}, {"seed", 7}}},
      {"mre", {{"encoder_kernels", 8}, {"tcn_channels", 8}, {"out_channels", 4}}},
      {"backbone",
       {{"channels", 16}, {"embedding_dim", 16}, {"se_channels", 8}, {"attention_channels", 8}}},
      {"optimizer", {{"batch_size", 4}, {"steps_per_epoch", 5}}},
      {"schedule", {{"cycles", 1}, {"epochs_per_cycle", 1}}},
      {"data",
       {{"train_manifest", "corpus/train.csv"},
        {"eval_manifest", "corpus/eval.csv"},
        {"trials", "corpus/trials.txt"}}},
      {"eval", {{"durations", "full,1"}}},
  };
  std::ofstream(dir / "config.json") << cfg.dump(2);

  auto train = [&](const std::string& out) {
    TrainArgs a;
    a.config = dir / "config.json";
    a.common.deterministic = true;
    a.max_steps = 5;
    a.output_dir = dir / out;
    cmd_train(a);
    std::vector<double> losses;
    std::ifstream in(dir / out / "metrics.jsonl");
    for (std::string line; std::getline(in, line);)
      losses.push_back(nlohmann::json::parse(line)["loss"].get<double>());
    return losses;
  };
  const auto a = train("run_a"), b = train("run_b");

  auto evaluate = [&] {
    EvaluateArgs e;
    e.config = dir / "config.json";
    e.checkpoint = dir / "run_a" / "final.ckpt";
    e.common.deterministic = true;
    std::ostringstream csv;
    cmd_evaluate(e, csv);
    return csv.str();
  };
  const std::string csv1 = evaluate(), csv2 = evaluate();
  Outcome o;
  o.pass = a.size() == 5 && a == b && csv1 == csv2 && !csv1.empty();
  o.detail = std::to_string(a.size()) + "-step loss logs " + (a == b ? "identical" : "DIFFER") +
             "; evaluation CSVs " + (csv1 == csv2 ? "identical" : "DIFFER");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"MRE frame geometry", geometry},
      {"identity-init variant collapse", variant_collapse},
      {"frozen PTM during training", frozen_ptm},
      {"EER/minDCF oracle equivalence", metric_oracle},
      {"AAM-softmax gradient fidelity", gradient_fidelity},
      {"cyclical schedule exactness", schedule},
      {"2-s frame-grid consistency", frame_grid},
      {"toy end-to-end learning (S4)", toy_learning},
      {"S4 vs S1 direction (soft)", direction},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s -- %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id,
                criteria[i].first.c_str(), o.detail.c_str(), s);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
