#include "msmmt/eval/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>

#include "msmmt/diffmath/msmt_io.hpp"

namespace msmmt::eval {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw EvalError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<Fold> loso_split(const std::vector<Sample>& samples) {
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].subject_id.empty()) throw EvalError("sample " + samples[i].id + " has no subject id");
    by_subject[samples[i].subject_id].push_back(i);
  }
  if (by_subject.size() < 2) throw EvalError("LOSO needs at least two subjects");
  std::vector<Fold> folds;
  for (const auto& [subject, test] : by_subject) {
    Fold f;
    f.test_subject = subject;
    f.test = test;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].subject_id != subject) f.train.push_back(i);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

LabelMap LabelMap::cde() {
  LabelMap m;
  m.classes = {"positive", "negative", "surprise"};
  m.table = {{"happiness", "positive"}, {"disgust", "negative"},  {"repression", "negative"},
             {"anger", "negative"},     {"sadness", "negative"},  {"fear", "negative"},
             {"contempt", "negative"},  {"surprise", "surprise"}};
  m.passthrough_sources = {"smic"};
  return m;
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  const json j = read_json(path);
  LabelMap m;
  try {
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& [k, v] : j.at("map").items()) m.table[lower(k)] = v.get<std::string>();
    for (const auto& s : j.value("passthrough_sources", std::vector<std::string>{})) m.passthrough_sources.insert(lower(s));
  } catch (const json::exception& e) {
    throw EvalError(path.string() + ": " + e.what());
  }
  for (const auto& [k, v] : m.table) {
    if (std::find(m.classes.begin(), m.classes.end(), v) == m.classes.end()) {
      throw EvalError(path.string() + ": label '" + k + "' maps to unknown class '" + v + "'");
    }
  }
  return m;
}

int cde_relabel(const std::string& label, const std::string& source, const LabelMap& map) {
  const std::string l = lower(label);
  std::string cls;
  if (map.passthrough_sources.count(lower(source))) {
    cls = l;
  } else if (auto it = map.table.find(l); it != map.table.end()) {
    cls = it->second;
  }
  for (std::size_t c = 0; c < map.classes.size(); ++c) {
    if (map.classes[c] == cls) return static_cast<int>(c);
  }
  throw EvalError("unmapped label '" + label + "' from source '" + source + "'");
}

std::filesystem::path resolve(const std::filesystem::path& manifest_path, const std::string& p) {
  const std::filesystem::path q(p);
  return q.is_absolute() ? q : manifest_path.parent_path() / q;
}

std::vector<Sample> read_manifest(const std::filesystem::path& path, const LabelMap& map) {
  const json j = read_json(path);
  if (!j.is_array()) throw EvalError(path.string() + ": manifest must be a JSON list");
  std::vector<Sample> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string where = path.string() + " entry " + std::to_string(i);
    Sample s;
    try {
      s.clip_path = e.at("clip_path").get<std::string>();
      s.id = e.value("id", std::filesystem::path(s.clip_path).stem().string());
      if (e.contains("landmarks_path") && !e["landmarks_path"].is_null()) {
        s.landmarks_path = e["landmarks_path"].get<std::string>();
      }
      s.subject_id = e.at("subject_id").is_string() ? e["subject_id"].get<std::string>()
                                                     : e["subject_id"].dump();
      s.source = e.value("source", std::string{});
      if (e.at("label").is_string()) {
        s.label = cde_relabel(e["label"].get<std::string>(), s.source, map);
      } else {
        s.label = e["label"].get<int>();
      }
      s.onset = e.value("onset", 0);
      s.apex = e.contains("apex") && !e["apex"].is_null() ? e["apex"].get<int>() : -1;
      s.offset = e.contains("offset") && !e["offset"].is_null() ? e["offset"].get<int>() : -1;
    } catch (const json::exception& ex) {
      throw EvalError(where + ": " + ex.what());
    }
    if (s.label < 0) throw EvalError(where + ": negative label");
    if (!ids.insert(s.id).second) throw EvalError(where + ": duplicate id " + s.id);
    out.push_back(std::move(s));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  json j = json::array();
  for (const auto& s : samples) {
    json e{{"id", s.id},         {"clip_path", s.clip_path}, {"subject_id", s.subject_id},
           {"label", s.label},   {"source", s.source},       {"onset", s.onset}};
    e["landmarks_path"] = s.landmarks_path ? json(*s.landmarks_path) : json(nullptr);
    e["apex"] = s.apex >= 0 ? json(s.apex) : json(nullptr);
    e["offset"] = s.offset >= 0 ? json(s.offset) : json(nullptr);
    j.push_back(std::move(e));
  }
  diffmath::write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace msmmt::eval
