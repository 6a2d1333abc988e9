#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "../common/toy_setup.hpp"
#include "mrsv/checkpoint.hpp"
#include "mrsv/cli.hpp"
#include "mrsv/toy_corpus.hpp"

using namespace mrsv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mrsv_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 4 speakers x 5 utterances, two held out per speaker.
const fs::path& corpus_dir() {
  static const fs::path dir = [] {
    const fs::path d = scratch("cli_corpus");
    ToyCorpusOptions o;
    o.num_speakers = 4;
    o.utts_per_speaker = 5;
    o.heldout_per_speaker = 2;
    write_toy_corpus(make_toy_corpus(o), d / "corpus");
    return d;
  }();
  return dir;
}

nlohmann::json small_config(const std::string& variant) {
  return {
      {"seed", 3},
      {"variant", variant},
      {"output_dir", "out_" + variant},
      {"ptm", {{"kind", "stub"}, {"num_layers", 4}, {"dim", 16}, {"seed", 7}}},
      {"mre", {{"encoder_kernels", 8}, {"tcn_channels", 8}, {"out_channels", 4}}},
      {"backbone",
       {{"channels", 16}, {"embedding_dim", 16}, {"se_channels", 8}, {"attention_channels", 8}}},
      {"schedule", {{"lr_max", 2e-3}, {"cycles", 1}, {"epochs_per_cycle", 1}}},
      {"optimizer", {{"batch_size", 4}, {"steps_per_epoch", 2}}},
      {"data",
       {{"train_manifest", "corpus/train.csv"},
        {"eval_manifest", "corpus/eval.csv"},
        {"trials", "corpus/trials.txt"}}},
      {"eval", {{"durations", "full,1"}, {"as_norm", {{"cohort_size", 3}, {"top_k", 2}}}}},
  };
}

fs::path write_config(const nlohmann::json& j, const std::string& name) {
  const fs::path p = corpus_dir() / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

// Trains once per variant and caches the checkpoint.
fs::path trained(const std::string& variant) {
  static std::map<std::string, fs::path> cache;
  auto it = cache.find(variant);
  if (it != cache.end()) return it->second;
  TrainArgs a;
  a.config = write_config(small_config(variant), "cfg_" + variant + ".json");
  a.max_steps = 2;
  a.common.deterministic = true;
  const nlohmann::json report = cmd_train(a);
  return cache[variant] = corpus_dir() / ("out_" + variant) / "final.ckpt";
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("relative paths resolve against the config file") {
    const SystemConfig c = load_config(write_config(small_config("S1"), "rel.json"));
    CHECK(c.data.train_manifest == corpus_dir() / "corpus/train.csv");
    CHECK(c.output_dir == corpus_dir() / "out_S1");
    CHECK(c.variant.name == "S1");
    CHECK(c.ptm.stub.num_layers == 4);
  }
  SUBCASE("unknown keys are rejected with their path") {
    nlohmann::json j = small_config("S1");
    j["backbone"]["chanels"] = 8;
    CHECK_THROWS_WITH_AS(SystemConfig::from_json(j), doctest::Contains("backbone.chanels"),
                         ConfigError);
    j = small_config("S1");
    j["extra"] = 1;
    CHECK_THROWS_AS(SystemConfig::from_json(j), ConfigError);
  }
  SUBCASE("MRE integrality is checked at load time") {
    nlohmann::json j = small_config("S4");
    j["mre"]["shifts"] = {25};
    j["mre"]["frame_shift"] = 160;
    CHECK_THROWS_WITH_AS(SystemConfig::from_json(j).validate(),
                         doctest::Contains("window/2 * aligner_kernel/2 must equal frame_shift"),
                         ConfigError);
  }
  SUBCASE("other cross-field checks") {
    for (auto edit : std::vector<std::function<void(nlohmann::json&)>>{
             [](auto& j) { j["variant"] = "S7"; },
             [](auto& j) { j["optimizer"]["batch_size"] = 0; },
             [](auto& j) { j["eval"]["as_norm"]["top_k"] = 5; },
             [](auto& j) { j["eval"]["durations"] = "full,x"; },
             [](auto& j) { j["schedule"]["lr_min"] = 1.0; },
             [](auto& j) { j["data"]["crop_seconds"] = 0.01; },
         }) {
      nlohmann::json j = small_config("S4");
      edit(j);
      CHECK_THROWS_AS(SystemConfig::from_json(j, corpus_dir()).validate(), ConfigError);
    }
  }
  SUBCASE("to_json round trip") {
    const SystemConfig a = SystemConfig::from_json(small_config("S2"), corpus_dir());
    const SystemConfig b = SystemConfig::from_json(a.to_json());
    CHECK(a.to_json() == b.to_json());
    CHECK(b.mre.shifts == std::vector<int>{25, 50, 100, 200});
  }
  SUBCASE("overrides") {
    CommonArgs common;
    common.seed = 99;
    common.deterministic = true;
    const SystemConfig c = resolve_config(write_config(small_config("S1"), "ov.json"), common);
    CHECK(c.seed == 99);
    CHECK(c.eval.threads == 1);
  }
}

TEST_CASE("train rejects missing manifests before building a model") {
  nlohmann::json j = small_config("S1");
  j["data"]["train_manifest"] = "corpus/missing.csv";
  j["output_dir"] = "out_missing";
  TrainArgs a;
  a.config = write_config(j, "missing.json");
  CHECK_THROWS_WITH_AS(cmd_train(a), doctest::Contains("not found"), ConfigError);
  CHECK_FALSE(fs::exists(corpus_dir() / "out_missing"));

  j = small_config("S1");
  j["eval"]["as_norm"]["cohort_size"] = 9;
  j["output_dir"] = "out_big_cohort";
  a.config = write_config(j, "big_cohort.json");
  CHECK_THROWS_WITH_AS(cmd_train(a), doctest::Contains("exceeds the 4 training speakers"),
                       ConfigError);
  CHECK_FALSE(fs::exists(corpus_dir() / "out_big_cohort"));
}

TEST_CASE("train report") {
  trained("S1");
  std::ifstream in(corpus_dir() / "out_S1" / "report.json");
  const auto report = nlohmann::json::parse(in);
  CHECK(report["steps"] == 2);
  CHECK(report["layer_weights"].size() == 5);
  CHECK(report["checksums"]["initial"]["ptm"] == report["checksums"]["final"]["ptm"]);
  CHECK(report["metrics"].size() == 2);
  CHECK(fs::exists(corpus_dir() / "out_S1" / "metrics.csv"));
  CHECK(fs::exists(corpus_dir() / "out_S1" / "config.json"));
}

TEST_CASE("evaluate") {
  const fs::path ckpt = trained("S1");
  EvaluateArgs a;
  a.config = corpus_dir() / "cfg_S1.json";
  a.checkpoint = ckpt;
  a.durations = "full,2,1";
  std::ostringstream first, second;
  const auto rows = cmd_evaluate(a, first);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].duration == "full");
  CHECK(rows[2].duration == "1");
  cmd_evaluate(a, second);
  CHECK(first.str() == second.str());
  CHECK(first.str().rfind("duration,eer,min_dcf\n", 0) == 0);

  a.as_norm = true;
  std::ostringstream norm;
  CHECK(cmd_evaluate(a, norm)[0].eer_norm.has_value());

  nlohmann::json j = small_config("S1");
  j["eval"]["as_norm"] = {{"cohort_size", 0}};
  a.config = write_config(j, "nocohort.json");
  std::ostringstream sink;
  CHECK_THROWS_WITH_AS(cmd_evaluate(a, sink), doctest::Contains("cohort_size"), ConfigError);

  a.config = write_config(small_config("S2"), "s2.json");
  a.as_norm = false;
  CHECK_THROWS_WITH_AS(cmd_evaluate(a, sink), doctest::Contains("incompatible checkpoint"),
                       ConfigError);
}

TEST_CASE("score") {
  const fs::path ckpt = trained("S1");
  const Manifest eval = Manifest::read_csv(corpus_dir() / "corpus/eval.csv");
  const auto& e = eval.entries();
  const fs::path trials = corpus_dir() / "three.txt";
  std::ofstream(trials) << "1 " << e[0].utterance_id << ' ' << e[0].utterance_id << '\n'
                        << "0 " << e[0].utterance_id << ' ' << e[4].utterance_id << '\n'
                        << "1 " << e[0].utterance_id << ' ' << e[1].utterance_id << '\n';
  ScoreArgs a;
  a.checkpoint = ckpt;
  a.trials = trials;
  a.manifest = corpus_dir() / "corpus/eval.csv";
  std::ostringstream out;
  const ScoreSet s = cmd_score(a, out);
  REQUIRE(s.raw.size() == 3);
  CHECK(s.raw[0] == doctest::Approx(1.0).epsilon(1e-12));
  std::istringstream lines(out.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string en, te;
    ls >> en >> te;
    CHECK(en == e[0].utterance_id);
    ++n;
  }
  CHECK(n == 3);

  std::ofstream(trials) << "1 " << e[0].utterance_id << " nobody_here\n";
  CHECK_THROWS_WITH_AS(cmd_score(a, out), doctest::Contains("nobody_here"), Error);
}

TEST_CASE("export-weights") {
  SUBCASE("untrained S1 is uniform") {
    const auto m = testutil::toy_model("S1", 1, testutil::toy_ptm());
    const fs::path p = scratch("export") / "fresh.ckpt";
    write_checkpoint(p, {{"variant", "S1"}}, model_state(*m));
    std::ostringstream csv;
    const auto cols = cmd_export_weights({{p}, std::nullopt}, csv);
    REQUIRE(cols.size() == 1);
    REQUIRE(cols[0].size() == 5);
    double sum = 0.0;
    for (double w : cols[0]) {
      CHECK(w == doctest::Approx(0.2).epsilon(1e-15));
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(csv.str().rfind("layer_index,weight\n", 0) == 0);
  }
  SUBCASE("two checkpoints side by side with a plot") {
    const fs::path svg = scratch("export_plot") / "w.svg";
    std::ostringstream csv;
    const auto cols = cmd_export_weights({{trained("S1"), trained("S4")}, svg}, csv);
    REQUIRE(cols.size() == 2);
    CHECK(csv.str().rfind("layer_index,S1:final,S4:final\n", 0) == 0);
    CHECK(fs::file_size(svg) > 0);
  }
  SUBCASE("variant without PTM branch") {
    const auto m = testutil::toy_model("fbank_only", 1, testutil::toy_ptm());
    const fs::path p = scratch("export_fb") / "fb.ckpt";
    write_checkpoint(p, {{"variant", "fbank_only"}}, model_state(*m));
    std::ostringstream csv;
    CHECK_THROWS_WITH_AS(cmd_export_weights({{p}, std::nullopt}, csv),
                         doctest::Contains("has no PTM branch"), Error);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto ptm = testutil::toy_ptm();
  const auto a = testutil::toy_model("S4", 21, ptm), b = testutil::toy_model("S4", 22, ptm);
  const fs::path p = scratch("ckpt") / "m.ckpt";
  write_checkpoint(p, {{"variant", "S4"}, {"note", "x"}}, model_state(*a));
  const Checkpoint c = read_checkpoint(p);
  CHECK(c.config["note"] == "x");
  CHECK(c.has_group("ptm_fusion"));
  CHECK(c.find("ptm_fusion", "fusion.raw") != nullptr);
  load_model_state(*b, c);
  const AudioSegment seg = [] {
    AudioSegment s;
    s.samples.resize(16000);
    for (std::size_t i = 0; i < s.samples.size(); ++i) s.samples[i] = std::sin(0.01 * i * i);
    return s;
  }();
  CHECK(a->embed(seg) == b->embed(seg));

  const auto s1 = testutil::toy_model("S1", 21, ptm);
  const fs::path p1 = p.parent_path() / "s1.ckpt";
  write_checkpoint(p1, {{"variant", "S1"}}, model_state(*s1));
  CHECK_THROWS_AS(load_model_state(*b, read_checkpoint(p1)), Error);
  std::ofstream(scratch("ckpt_bad") / "bad.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(read_checkpoint(fs::temp_directory_path() / "mrsv_unit/ckpt_bad/bad.ckpt"),
                  Error);
}
