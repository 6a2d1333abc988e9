// mrsv: train, evaluate, score and inspect speaker verification models.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mrsv/cli.hpp"
#include "mrsv/toy_corpus.hpp"

namespace {

// Writes to the file when a path is given, stdout otherwise.
template <typename F>
void with_output(const std::string& path, F&& f) {
  if (path.empty() || path == "-") {
    f(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw mrsv::Error("cannot write " + path);
  f(out);
}

void add_common(CLI::App* cmd, mrsv::CommonArgs& common, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Override the root seed");
  cmd->add_flag("--deterministic", common.deterministic, "Serialize all execution");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker verification with frozen PTM features and multi-resolution encoders"};
  app.require_subcommand(1);

  mrsv::CommonArgs common;
  std::uint64_t seed = 0;
  std::string output;

  mrsv::TrainArgs train;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train the configured variant");
  train_cmd->add_option("--config", train.config, "Run configuration (JSON)")->required();
  train_cmd->add_option("--output", train_out, "Output directory (overrides output_dir)");
  train_cmd->add_option("--max-steps", train.max_steps, "Stop after this many steps");
  add_common(train_cmd, common, seed);

  mrsv::EvaluateArgs eval;
  std::string eval_trials, durations;
  auto* eval_cmd = app.add_subcommand("evaluate", "EER / minDCF per test duration");
  eval_cmd->add_option("--config", eval.config, "Run configuration (JSON)")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Trained checkpoint")->required();
  eval_cmd->add_option("--trials", eval_trials, "Trial list (overrides data.trials)");
  eval_cmd->add_option("--durations", durations, "Comma separated, e.g. full,2,1");
  eval_cmd->add_flag("--as-norm", eval.as_norm, "Add AS-norm columns");
  eval_cmd->add_option("--output", output, "Metrics CSV (default stdout)");
  add_common(eval_cmd, common, seed);

  mrsv::ScoreArgs score;
  std::string score_config;
  auto* score_cmd = app.add_subcommand("score", "Cosine scores for a trial list");
  score_cmd->add_option("--checkpoint", score.checkpoint, "Trained checkpoint")->required();
  score_cmd->add_option("--trials", score.trials, "Trial list")->required();
  score_cmd->add_option("--manifest", score.manifest, "Manifest covering every trial id")->required();
  score_cmd->add_option("--config", score_config, "Run configuration (default: checkpoint snapshot)");
  score_cmd->add_flag("--as-norm", score.as_norm, "Append AS-normalized scores");
  score_cmd->add_option("--output", output, "Score file (default stdout)");
  add_common(score_cmd, common, seed);

  mrsv::ExportArgs exp;
  std::string plot;
  auto* export_cmd = app.add_subcommand("export-weights", "Normalized PTM layer weights");
  export_cmd->add_option("--checkpoint", exp.checkpoints, "One or more checkpoints")->required();
  export_cmd->add_option("--plot", plot, "Also write an SVG bar chart");
  export_cmd->add_option("--output", output, "CSV (default stdout)");

  mrsv::ToyCorpusOptions toy;
  std::string toy_dir;
  auto* toy_cmd = app.add_subcommand("make-toy-corpus", "Synthetic band-signature speakers");
  toy_cmd->add_option("--output", toy_dir, "Target directory")->required();
  toy_cmd->add_option("--speakers", toy.num_speakers, "Number of speakers");
  toy_cmd->add_option("--utterances", toy.utts_per_speaker, "Utterances per speaker");
  toy_cmd->add_option("--heldout", toy.heldout_per_speaker, "Held-out utterances per speaker");
  toy_cmd->add_option("--seed", toy.seed, "Corpus seed");

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto* cmd : {train_cmd, eval_cmd, score_cmd})
      if (cmd->parsed() && cmd->count("--seed")) common.seed = seed;

    if (train_cmd->parsed()) {
      train.common = common;
      if (!train_out.empty()) train.output_dir = train_out;
      const auto report = mrsv::cmd_train(train);
      std::cout << "trained " << report["steps"] << " steps; report in "
                << report["config"]["output_dir"].get<std::string>() << "/report.json\n";
    } else if (eval_cmd->parsed()) {
      eval.common = common;
      if (!eval_trials.empty()) eval.trials = eval_trials;
      if (!durations.empty()) eval.durations = durations;
      with_output(output, [&](std::ostream& out) { mrsv::cmd_evaluate(eval, out); });
    } else if (score_cmd->parsed()) {
      score.common = common;
      if (!score_config.empty()) score.config = score_config;
      with_output(output, [&](std::ostream& out) { mrsv::cmd_score(score, out); });
    } else if (export_cmd->parsed()) {
      if (!plot.empty()) exp.plot = plot;
      with_output(output, [&](std::ostream& out) { mrsv::cmd_export_weights(exp, out); });
    } else if (toy_cmd->parsed()) {
      mrsv::write_toy_corpus(mrsv::make_toy_corpus(toy), toy_dir);
      std::cout << "wrote toy corpus to " << toy_dir << '\n';
    }
  } catch (const mrsv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
