#include "triggerbench/corpus.hpp"

#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "triggerbench/error.hpp"
#include "triggerbench/text.hpp"

namespace triggerbench::corpus {

using nlohmann::json;
using nlohmann::ordered_json;

TaskKind task_kind_from_string(const std::string& s) {
  const std::string t = text::to_lower(text::trim(s));
  if (t == "classification") return TaskKind::classification;
  if (t == "translation") return TaskKind::translation;
  if (t == "summarization") return TaskKind::summarization;
  if (t == "math") return TaskKind::math;
  throw ConfigError("unknown task_kind: '" + s + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::translation: return "translation";
    case TaskKind::summarization: return "summarization";
    case TaskKind::math: return "math";
  }
  return "classification";
}

bool Dataset::has_semantic_labels() const {
  for (const Sample& s : samples) {
    if (s.semantic_label) return true;
  }
  return false;
}

std::optional<std::string> canonical_label(const std::vector<std::string>& space,
                                           const std::string& raw) {
  const std::string t = text::trim(raw);
  for (const std::string& s : space) {
    if (text::iequals(s, t)) return s;
  }
  return std::nullopt;
}

namespace {

std::string where(const std::filesystem::path& path, int line) {
  return path.filename().string() + ":" + std::to_string(line);
}

void check_space(const std::vector<std::string>& space, const std::string& what,
                 const std::filesystem::path& path) {
  if (space.empty()) throw DataError(path.string() + ": " + what + " is empty");
  std::unordered_set<std::string> seen;
  for (const std::string& s : space) {
    if (text::trim(s).empty()) throw DataError(path.string() + ": blank entry in " + what);
    if (!seen.insert(text::to_lower(text::trim(s))).second) {
      throw DataError(path.string() + ": duplicate entry '" + s + "' in " + what);
    }
  }
}

std::vector<std::string> string_array(const json& j, const std::string& key,
                                      const std::filesystem::path& path, int line) {
  if (!j.at(key).is_array()) throw DataError(where(path, line) + ": " + key + " must be an array");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw DataError(where(path, line) + ": " + key + " entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

bool looks_like_header(const json& j) {
  return j.is_object() && j.contains("label_space") && !j.contains("text");
}

std::string required_string(const json& j, const std::string& key,
                            const std::filesystem::path& path, int line) {
  if (!j.contains(key)) throw DataError(where(path, line) + ": missing key '" + key + "'");
  if (!j.at(key).is_string()) throw DataError(where(path, line) + ": '" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path,
                     const std::optional<DatasetHeader>& declared) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path.string());

  Dataset ds;
  bool have_header = false;
  if (declared) {
    ds.name = declared->name.empty() ? path.stem().string() : declared->name;
    ds.task_kind = declared->task_kind;
    ds.label_space = declared->label_space;
    ds.semantic_label_space = declared->semantic_label_space;
    have_header = true;
  }

  std::string line;
  int lineno = 0;
  bool explicit_indices = false;
  std::unordered_set<int> seen_indices;

  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = text::trim(line);
    if (stripped.empty()) continue;

    json j;
    try {
      j = json::parse(stripped);
    } catch (const json::exception& e) {
      throw DataError(where(path, lineno) + ": malformed record: " + e.what());
    }
    if (!j.is_object()) throw DataError(where(path, lineno) + ": record must be an object");

    if (looks_like_header(j)) {
      if (!ds.samples.empty()) {
        throw DataError(where(path, lineno) + ": header line after records");
      }
      if (!declared) {
        ds.name = j.value("name", path.stem().string());
        ds.task_kind = j.contains("task_kind")
                           ? task_kind_from_string(required_string(j, "task_kind", path, lineno))
                           : TaskKind::classification;
        ds.label_space = string_array(j, "label_space", path, lineno);
        if (j.contains("semantic_label_space")) {
          ds.semantic_label_space = string_array(j, "semantic_label_space", path, lineno);
        }
        have_header = true;
      }
      continue;  // explicit `declared` wins over the in-file header
    }

    if (!have_header) {
      throw DataError(where(path, lineno) +
                      ": record before any dataset header (add a leading header line or pass "
                      "declared spaces)");
    }

    Sample s;
    s.text = required_string(j, "text", path, lineno);
    if (text::trim(s.text).empty()) {
      throw DataError(where(path, lineno) + ": text is empty");
    }
    const std::string raw_label = required_string(j, "label", path, lineno);
    auto canon = canonical_label(ds.label_space, raw_label);
    if (!canon) {
      throw DataError(where(path, lineno) + ": label '" + raw_label +
                      "' not in declared label space");
    }
    s.label = *canon;

    if (j.contains("semantic_label") && !j.at("semantic_label").is_null()) {
      if (!ds.semantic_label_space) {
        throw DataError(where(path, lineno) +
                        ": semantic_label present but no semantic label space declared");
      }
      const std::string raw_sem = required_string(j, "semantic_label", path, lineno);
      auto sem = canonical_label(*ds.semantic_label_space, raw_sem);
      if (!sem) {
        throw DataError(where(path, lineno) + ": semantic_label '" + raw_sem +
                        "' not in declared semantic label space");
      }
      s.semantic_label = *sem;
    }
    if (j.contains("reference") && !j.at("reference").is_null()) {
      s.reference = required_string(j, "reference", path, lineno);
    }

    if (j.contains("index") && !j.at("index").is_null()) {
      if (!j.at("index").is_number_integer()) {
        throw DataError(where(path, lineno) + ": 'index' must be an integer");
      }
      s.index = j.at("index").get<int>();
      if (s.index < 0) throw DataError(where(path, lineno) + ": 'index' must be >= 0");
      explicit_indices = true;
    } else {
      if (explicit_indices) {
        throw DataError(where(path, lineno) + ": mixed records with and without 'index'");
      }
      s.index = static_cast<int>(ds.samples.size());
    }
    if (!seen_indices.insert(s.index).second) {
      throw DataError(where(path, lineno) + ": duplicate sample index " +
                      std::to_string(s.index));
    }
    ds.samples.push_back(std::move(s));
  }

  if (!have_header) throw DataError(path.string() + ": missing dataset header");
  check_space(ds.label_space, "label_space", path);
  if (ds.semantic_label_space) check_space(*ds.semantic_label_space, "semantic_label_space", path);
  if (ds.samples.empty()) throw DataError(path.string() + ": dataset has no records");
  if (ds.name.empty()) ds.name = path.stem().string();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  if (dataset.samples.empty()) throw DataError("refusing to save a dataset with no records");
  std::string out;
  ordered_json header;
  header["name"] = dataset.name;
  header["task_kind"] = to_string(dataset.task_kind);
  header["label_space"] = dataset.label_space;
  if (dataset.semantic_label_space) {
    header["semantic_label_space"] = *dataset.semantic_label_space;
  }
  out += header.dump();
  out += '\n';
  for (const Sample& s : dataset.samples) {
    ordered_json rec;
    rec["index"] = s.index;
    rec["text"] = s.text;
    rec["label"] = s.label;
    if (s.semantic_label) rec["semantic_label"] = *s.semantic_label;
    if (s.reference) rec["reference"] = *s.reference;
    out += rec.dump();
    out += '\n';
  }
  text::write_file_atomic(path, out);
}

std::pair<Dataset, Dataset> split_by_class(const Dataset& dataset,
                                           const std::string& class_name,
                                           bool on_semantic) {
  const std::vector<std::string>* space = &dataset.label_space;
  if (on_semantic) {
    if (!dataset.semantic_label_space) {
      throw DataError("dataset '" + dataset.name + "' declares no semantic label space");
    }
    space = &*dataset.semantic_label_space;
  }
  auto canon = canonical_label(*space, class_name);
  if (!canon) {
    throw DataError("unknown class '" + class_name + "' for dataset '" + dataset.name + "'");
  }

  Dataset in_class = dataset.shell();
  Dataset rest = dataset.shell();
  for (const Sample& s : dataset.samples) {
    bool match;
    if (on_semantic) {
      match = s.semantic_label && text::iequals(*s.semantic_label, *canon);
    } else {
      match = text::iequals(s.label, *canon);
    }
    (match ? in_class : rest).samples.push_back(s);
  }
  return {std::move(in_class), std::move(rest)};
}

}  // namespace triggerbench::corpus
