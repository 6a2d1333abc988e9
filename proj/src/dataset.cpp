#include "mrsv/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mrsv {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Manifest::Manifest(std::vector<ManifestEntry> entries) : entries_(std::move(entries)) { index(); }

void Manifest::index() {
  by_id_.clear();
  by_path_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const ManifestEntry& e = entries_[i];
    if (e.utterance_id.empty()) throw Error("manifest: empty utterance id");
    if (!(e.duration_s > 0.0))
      throw Error("manifest: non-positive duration for " + e.utterance_id);
    if (!by_id_.emplace(e.utterance_id, i).second)
      throw Error("manifest: duplicate utterance id " + e.utterance_id);
    by_path_.emplace(e.path.string(), i);
    by_path_.emplace(e.path.lexically_normal().string(), i);
  }
}

Manifest Manifest::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "utterance_id,speaker_id,path,duration_s")
    throw Error("manifest " + path.string() +
                ": expected header utterance_id,speaker_id,path,duration_s");
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4)
      throw Error("manifest " + path.string() + ": expected 4 fields at line " +
                  std::to_string(lineno));
    ManifestEntry e;
    e.utterance_id = trim(f[0]);
    e.speaker_id = trim(f[1]);
    e.path = trim(f[2]);
    if (e.path.is_relative()) e.path = base / e.path;
    try {
      e.duration_s = std::stod(f[3]);
    } catch (const std::exception&) {
      throw Error("manifest " + path.string() + ": bad duration at line " +
                  std::to_string(lineno));
    }
    entries.push_back(std::move(e));
  }
  return Manifest(std::move(entries));
}

void Manifest::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest: " + path.string());
  out << "utterance_id,speaker_id,path,duration_s\n";
  out.precision(10);
  for (const auto& e : entries_)
    out << e.utterance_id << ',' << e.speaker_id << ',' << e.path.string() << ',' << e.duration_s
        << '\n';
}

std::vector<std::string> Manifest::speakers() const {
  std::set<std::string> s;
  for (const auto& e : entries_) s.insert(e.speaker_id);
  return {s.begin(), s.end()};
}

std::map<std::string, int> Manifest::speaker_index() const {
  std::map<std::string, int> m;
  int i = 0;
  for (const auto& s : speakers()) m.emplace(s, i++);
  return m;
}

const ManifestEntry* Manifest::resolve(const std::string& key) const {
  if (auto it = by_id_.find(key); it != by_id_.end()) return &entries_[it->second];
  if (auto it = by_path_.find(key); it != by_path_.end()) return &entries_[it->second];
  const std::string normal = std::filesystem::path(key).lexically_normal().string();
  if (auto it = by_path_.find(normal); it != by_path_.end()) return &entries_[it->second];
  // Trial lists usually carry paths relative to the corpus root.
  for (const auto& e : entries_) {
    const std::string p = e.path.lexically_normal().string();
    if (p.size() > normal.size() && p.compare(p.size() - normal.size(), normal.size(), normal) == 0 &&
        p[p.size() - normal.size() - 1] == '/')
      return &e;
  }
  return nullptr;
}

const ManifestEntry& Manifest::at(const std::string& key) const {
  const ManifestEntry* e = resolve(key);
  if (!e) throw Error("unresolved utterance id: " + key);
  return *e;
}

AudioSegment Manifest::load(const ManifestEntry& entry, const LoadOptions& opt) const {
  AudioSegment seg = load_audio(entry.path, opt);
  seg.utterance_id = entry.utterance_id;
  seg.speaker_id = entry.speaker_id;
  return seg;
}

TrialList parse_trials(std::istream& in) {
  TrialList trials;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream is(line);
    std::string label, enroll, test, extra;
    if (!(is >> label >> enroll >> test) || (is >> extra))
      throw Error("malformed trial at line " + std::to_string(lineno));
    if (label != "0" && label != "1")
      throw Error("invalid label at line " + std::to_string(lineno));
    trials.push_back({label == "1", enroll, test});
  }
  return trials;
}

TrialList parse_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trial list: " + path.string());
  return parse_trials(in);
}

void write_trials(const std::filesystem::path& path, const TrialList& trials) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trial list: " + path.string());
  for (const auto& t : trials)
    out << (t.is_target ? 1 : 0) << ' ' << t.enroll_id << ' ' << t.test_id << '\n';
}

void check_trials_resolvable(const TrialList& trials, const Manifest& manifest) {
  for (const auto& t : trials) {
    if (!manifest.resolve(t.enroll_id)) throw Error("unresolved utterance id: " + t.enroll_id);
    if (!manifest.resolve(t.test_id)) throw Error("unresolved utterance id: " + t.test_id);
  }
}

}  // namespace mrsv
