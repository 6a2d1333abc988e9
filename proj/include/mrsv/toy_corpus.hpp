// Synthetic speakers: each owns a few resonant bands; an utterance is white
// noise shaped by that speaker's bands with small per-utterance jitter,
// a slow amplitude envelope and a broadband floor.
#pragma once

#include <filesystem>
#include <vector>

#include "mrsv/audio.hpp"
#include "mrsv/dataset.hpp"

namespace mrsv {

struct ToyCorpusOptions {
  int num_speakers = 20;
  int utts_per_speaker = 50;
  int heldout_per_speaker = 10;  // the last N utterances of each speaker
  int bands_per_speaker = 3;
  double min_seconds = 2.0;
  double max_seconds = 3.0;
  std::uint64_t seed = 1;
};

struct ToyCorpus {
  std::vector<AudioSegment> train;
  std::vector<int> train_labels;
  std::vector<AudioSegment> heldout;
  std::vector<int> heldout_labels;
};

ToyCorpus make_toy_corpus(const ToyCorpusOptions& opt = {});

// Every unordered pair of distinct utterances, in index order.
TrialList all_pair_trials(const std::vector<AudioSegment>& utterances);

// Writes wav/ files, train.csv, eval.csv and trials.txt under dir.
void write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir);

}  // namespace mrsv
