#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "../common/toy_setup.hpp"
#include "grad_check.hpp"
#include "mrsv/checkpoint.hpp"
#include "mrsv/toy_corpus.hpp"

using namespace mrsv;

namespace {

// Cross-entropy with the margin applied to the target angle, from the
// definition (acos / cos), as an independent reference.
double reference_aam(const std::vector<double>& e, const std::vector<std::vector<double>>& w,
                     int label, double m, double s) {
  auto norm = [](const std::vector<double>& v) {
    double a = 0.0;
    for (double x : v) a += x * x;
    return std::sqrt(a);
  };
  std::vector<double> logits;
  for (std::size_t k = 0; k < w.size(); ++k) {
    double dot = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) dot += e[i] * w[k][i];
    const double c = dot / (norm(e) * norm(w[k]));
    logits.push_back(static_cast<int>(k) == label ? s * std::cos(std::acos(c) + m) : s * c);
  }
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return -(logits[label] - mx - std::log(z));
}

nn::Tensor rows(const std::vector<std::vector<double>>& r) {
  std::vector<double> v;
  for (const auto& x : r) v.insert(v.end(), x.begin(), x.end());
  return nn::Tensor::parameter({static_cast<int>(r.size()), static_cast<int>(r[0].size())}, v);
}

ToyCorpus tiny_corpus() {
  ToyCorpusOptions o;
  o.num_speakers = 4;
  o.utts_per_speaker = 4;
  o.heldout_per_speaker = 1;
  return make_toy_corpus(o);
}

TrainOptions tiny_options(std::uint64_t seed) {
  TrainOptions opt = testutil::toy_train_options(seed);
  opt.batch_size = 4;
  opt.steps_per_epoch = 5;
  opt.schedule.lr_max = 1e-2;
  return opt;
}

std::map<std::string, std::uint64_t> group_sums(const SpeakerModel& m) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [name, list] : m.parameter_groups()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : list) h = checksum(t.tensor.data(), h);
    out[name] = h;
  }
  return out;
}

}  // namespace

TEST_CASE("AAM-softmax examples") {
  LossConfig cfg;
  SUBCASE("two classes, aligned embedding") {
    const nn::Tensor e = nn::Tensor::from({1, 2}, {1, 0});
    const nn::Tensor w = nn::Tensor::from({2, 2}, {1, 0, 0, 1});
    const double loss = aam_softmax_loss(e, w, {0}, cfg).item();
    const double expect = std::log1p(std::exp(-30.0 * std::cos(0.2)));
    CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
    CHECK(loss < 2e-13);
  }
  SUBCASE("matches the direct definition, with and without margin") {
    Rng rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double m : {0.0, 0.2}) {
      LossConfig c;
      c.margin = m;
      std::vector<std::vector<double>> e(3, std::vector<double>(8)), w(4, std::vector<double>(8));
      for (auto& r : e) for (auto& v : r) v = g(rng);
      for (auto& r : w) for (auto& v : r) v = g(rng);
      const std::vector<int> labels{0, 3, 2};
      double expect = 0.0;
      for (int b = 0; b < 3; ++b) expect += reference_aam(e[b], w, labels[b], m, 30.0) / 3.0;
      CHECK(aam_softmax_loss(rows(e), rows(w), labels, c).item() ==
            doctest::Approx(expect).epsilon(1e-10));
    }
  }
  SUBCASE("non-negative on random inputs") {
    Rng rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
      std::vector<std::vector<double>> e(1, std::vector<double>(4)), w(3, std::vector<double>(4));
      for (auto& r : e) for (auto& v : r) v = g(rng);
      for (auto& r : w) for (auto& v : r) v = g(rng);
      REQUIRE(aam_softmax_loss(rows(e), rows(w), {k % 3}, cfg).item() >= 0.0);
    }
  }
  SUBCASE("bad labels") {
    const nn::Tensor e = nn::Tensor::from({1, 2}, {1, 0});
    const nn::Tensor w = nn::Tensor::from({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_WITH_AS(aam_softmax_loss(e, w, {2}, cfg), doctest::Contains("invalid label"), Error);
    CHECK_THROWS_AS(aam_softmax_loss(e, w, {0, 1}, cfg), Error);
  }
}

TEST_CASE("AAM-softmax gradients match finite differences") {
  Rng rng(3);
  const nn::Tensor e = testutil::random_param({5, 8}, rng);
  const nn::Tensor w = testutil::random_param({4, 8}, rng);
  const std::vector<int> labels{0, 1, 2, 3, 1};
  LossConfig cfg;
  testutil::check_gradients([&] { return aam_softmax_loss(e, w, labels, cfg); }, {e, w}, 1e-6);
}

TEST_CASE("cyclical learning rate") {
  ScheduleConfig cfg;
  const long per_cycle = 100;
  CHECK(lr_at(0, per_cycle, cfg) == 1e-8);
  for (int k = 0; k < 6; ++k) {
    CHECK(lr_at(k * per_cycle, per_cycle, cfg) == 1e-8);
    CHECK(lr_at(k * per_cycle + 50, per_cycle, cfg) == 1e-3 / std::pow(2.0, k));
  }
  CHECK(lr_at(50, per_cycle, cfg) == 1e-3);
  CHECK(lr_at(150, per_cycle, cfg) == 5e-4);
  CHECK(lr_at(600, per_cycle, cfg) == 1e-8);
  CHECK(lr_at(12345, per_cycle, cfg) == 1e-8);

  // Piecewise linear: second differences vanish away from the kinks.
  for (long s = 1; s < 599; ++s) {
    if (s % 50 == 0) continue;
    const double d2 = lr_at(s + 1, per_cycle, cfg) - 2 * lr_at(s, per_cycle, cfg) +
                      lr_at(s - 1, per_cycle, cfg);
    REQUIRE(std::abs(d2) < 1e-15);
  }
  ScheduleConfig flat = cfg;
  flat.halve_per_cycle = false;
  CHECK(lr_at(250, per_cycle, flat) == 1e-3);
  CHECK_THROWS_AS(lr_at(-1, per_cycle, cfg), Error);
  ScheduleConfig bad = cfg;
  bad.lr_min = 2e-3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("AdamW with zero gradients only applies weight decay") {
  nn::Tensor a = nn::Tensor::parameter({2, 2}, {1, -2, 3, 4});
  nn::Tensor b = nn::Tensor::parameter({2}, {5, 6});
  nn::AdamWOptions o;
  o.weight_decay = 0.1;
  nn::AdamW opt({{a, true}, {b, false}}, o);
  opt.zero_grad();
  opt.step(0.5);
  const std::vector<double> ea{0.95, -1.9, 2.85, 3.8};
  for (int i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(ea[i]).epsilon(1e-15));
  CHECK(b[0] == 5.0);
  CHECK(b[1] == 6.0);
}

TEST_CASE("trainer keeps the PTM frozen and moves every group") {
  const auto ptm = testutil::toy_ptm();
  const auto frozen = ptm->checksum();
  const auto m = testutil::toy_model("S4", 1, ptm);
  const auto before = group_sums(*m);
  const ToyCorpus c = tiny_corpus();
  TrainOptions opt = tiny_options(1);
  opt.max_steps = 10;
  Trainer t(*m, opt);
  const TrainResult r = t.run(TrainingSet::from_segments(c.train, c.train_labels));
  CHECK(r.log.size() == 10);
  CHECK(ptm->checksum() == frozen);
  CHECK(r.ptm_checksum == frozen);
  const auto after = group_sums(*m);
  REQUIRE(after.size() == 5);
  for (const auto& [name, h] : after) CHECK_MESSAGE(h != before.at(name), "group " << name << " unchanged");
}

TEST_CASE("training is deterministic for a fixed seed") {
  const ToyCorpus c = tiny_corpus();
  auto run = [&] {
    const auto m = testutil::toy_model("S4", 2, testutil::toy_ptm());
    TrainOptions opt = tiny_options(2);
    opt.max_steps = 5;
    Trainer t(*m, opt);
    std::vector<double> losses;
    for (const auto& s : t.run(TrainingSet::from_segments(c.train, c.train_labels)).log)
      losses.push_back(s.loss);
    return losses;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("trainer writes metrics and epoch checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "mrsv_unit" / "trainer_out";
  std::filesystem::remove_all(dir);
  const auto m = testutil::toy_model("S1", 3, testutil::toy_ptm());
  const ToyCorpus c = tiny_corpus();
  TrainOptions opt = tiny_options(3);
  opt.steps_per_epoch = 3;
  opt.max_steps = 6;
  opt.output_dir = dir;
  opt.config_snapshot = {{"variant", "S1"}};
  Trainer t(*m, opt);
  const TrainResult r = t.run(TrainingSet::from_segments(c.train, c.train_labels));
  CHECK(r.checkpoints.size() == 2);
  CHECK(std::filesystem::exists(dir / "epoch1.ckpt"));
  CHECK(std::filesystem::exists(dir / "epoch2.ckpt"));
  std::ifstream in(dir / "metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("loss"));
    CHECK(j.contains("lr"));
    ++lines;
  }
  CHECK(lines == 6);
  CHECK(read_checkpoint(dir / "epoch2.ckpt").config["variant"] == "S1");
}

TEST_CASE("speed perturbation labels") {
  const ToyCorpus c = tiny_corpus();
  SUBCASE("same class by default") {
    const auto m = testutil::toy_model("S1", 4, testutil::toy_ptm());
    TrainOptions opt = tiny_options(4);
    opt.augment.speed_factors = {0.9, 1.1};
    opt.max_steps = 1;
    Trainer t(*m, opt);
    t.run(TrainingSet::from_segments(c.train, c.train_labels));
    CHECK(t.head().num_classes() == 4);
  }
  SUBCASE("new classes on request") {
    const auto m = testutil::toy_model("S1", 4, testutil::toy_ptm());
    TrainOptions opt = tiny_options(4);
    opt.augment.speed_factors = {0.9, 1.1};
    opt.speed_as_new_class = true;
    opt.max_steps = 1;
    Trainer t(*m, opt);
    t.run(TrainingSet::from_segments(c.train, c.train_labels));
    CHECK(t.head().num_classes() == 12);
  }
  SUBCASE("mismatched class count") {
    const auto m = testutil::toy_model("S1", 4, testutil::toy_ptm());
    TrainOptions opt = tiny_options(4);
    opt.loss.num_classes = 7;
    Trainer t(*m, opt);
    CHECK_THROWS_WITH_AS(t.run(TrainingSet::from_segments(c.train, c.train_labels)),
                         doctest::Contains("class count mismatch"), Error);
  }
}
