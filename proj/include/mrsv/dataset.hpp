// Dataset manifests (CSV) and verification trial lists.
#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "mrsv/audio.hpp"

namespace mrsv {

struct ManifestEntry {
  std::string utterance_id;
  std::string speaker_id;
  std::filesystem::path path;
  double duration_s = 0.0;
};

// CSV with header `utterance_id,speaker_id,path,duration_s`.  Relative paths
// resolve against the manifest's directory.  Fields may not contain commas.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<ManifestEntry> entries);

  static Manifest read_csv(const std::filesystem::path& path);
  void write_csv(const std::filesystem::path& path) const;

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Sorted unique speaker ids; a speaker's class index is its position here.
  std::vector<std::string> speakers() const;
  std::map<std::string, int> speaker_index() const;

  // Lookup by utterance id, then by path (as written or resolved).
  const ManifestEntry* resolve(const std::string& key) const;
  const ManifestEntry& at(const std::string& key) const;

  AudioSegment load(const ManifestEntry& entry, const LoadOptions& opt = {}) const;

 private:
  void index();

  std::vector<ManifestEntry> entries_;
  std::map<std::string, std::size_t> by_id_;
  std::map<std::string, std::size_t> by_path_;
};

struct Trial {
  bool is_target = false;
  std::string enroll_id;
  std::string test_id;
};
using TrialList = std::vector<Trial>;

// Whitespace-separated `label enroll test` lines, label in {0, 1}.  Blank
// lines are skipped; anything else malformed reports its 1-based line.
TrialList parse_trials(std::istream& in);
TrialList parse_trials(const std::filesystem::path& path);
void write_trials(const std::filesystem::path& path, const TrialList& trials);

// Throws naming the first id that the manifest cannot resolve.
void check_trials_resolvable(const TrialList& trials, const Manifest& manifest);

}  // namespace mrsv
