#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msmmt/eval/metrics.hpp"

namespace msmmt::eval {

struct Sample {
  std::string id;
  std::string clip_path;                     // relative paths resolve against the manifest directory
  std::optional<std::string> landmarks_path;
  std::string subject_id;
  int label = 0;
  std::string source;
  int onset = 0;
  int apex = -1;                             // -1: midpoint of onset..offset
  int offset = -1;                           // -1: last frame
};

struct Fold {
  std::string test_subject;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// One fold per distinct subject, ordered by subject id.
std::vector<Fold> loso_split(const std::vector<Sample>& samples);

/// Emotion-label to class-name table.
struct LabelMap {
  std::vector<std::string> classes;
  std::map<std::string, std::string> table;
  std::set<std::string> passthrough_sources;

  /// happiness -> positive; disgust, repression, anger, sadness, fear,
  /// contempt -> negative; surprise -> surprise; SMIC passes through.
  static LabelMap cde();
  /// {"classes": [...], "map": {label: class}, "passthrough_sources": [...]}
  static LabelMap load(const std::filesystem::path& path);
};

/// Class index for an original label; throws EvalError("unmapped label ...").
int cde_relabel(const std::string& label, const std::string& source, const LabelMap& map = LabelMap::cde());

/// Reads a JSON list of samples. String labels are mapped through `map`;
/// integer labels are taken as class indices.
std::vector<Sample> read_manifest(const std::filesystem::path& path, const LabelMap& map = LabelMap::cde());
void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);

std::filesystem::path resolve(const std::filesystem::path& manifest_path, const std::string& p);

}  // namespace msmmt::eval
