#include "triggerbench/trigger.hpp"

#include <cctype>
#include <fstream>

#include "json.hpp"
#include "triggerbench/error.hpp"
#include "triggerbench/text.hpp"

namespace triggerbench::trigger {

using nlohmann::json;

AttackLevel attack_level_from_string(const std::string& s) {
  const std::string t = text::to_lower(text::trim(s));
  if (t == "word") return AttackLevel::word;
  if (t == "syntax") return AttackLevel::syntax;
  if (t == "semantic") return AttackLevel::semantic;
  throw ConfigError("unknown attack level: '" + s + "'");
}

std::string to_string(AttackLevel level) {
  switch (level) {
    case AttackLevel::word: return "word";
    case AttackLevel::syntax: return "syntax";
    case AttackLevel::semantic: return "semantic";
  }
  return "word";
}

TriggerPosition trigger_position_from_string(const std::string& s) {
  const std::string t = text::to_lower(text::trim(s));
  if (t == "start") return TriggerPosition::start;
  if (t == "middle") return TriggerPosition::middle;
  if (t == "end") return TriggerPosition::end;
  throw ConfigError("unknown trigger position: '" + s + "'");
}

std::string to_string(TriggerPosition position) {
  switch (position) {
    case TriggerPosition::start: return "start";
    case TriggerPosition::middle: return "middle";
    case TriggerPosition::end: return "end";
  }
  return "start";
}

void AttackSpec::validate() const {
  if (repeat_count < 1) throw ConfigError("repeat_count must be >= 1");
  if (text::trim(target_label).empty()) throw ConfigError("target_label must be nonempty");
  switch (level) {
    case AttackLevel::word: {
      if (!trigger_word || text::trim(*trigger_word).empty()) {
        throw ConfigError("word-level attack needs trigger_word");
      }
      if (text::split_ws(*trigger_word).size() != 1) {
        throw ConfigError("trigger_word must be a single token");
      }
      break;
    }
    case AttackLevel::syntax: {
      if (text::trim(syntax_template).empty()) {
        throw ConfigError("syntax-level attack needs syntax_template");
      }
      break;
    }
    case AttackLevel::semantic: {
      if (!trigger_class || text::trim(*trigger_class).empty()) {
        throw ConfigError("semantic-level attack needs trigger_class");
      }
      if (text::trim(target_task).empty()) {
        throw ConfigError("semantic-level attack needs target_task");
      }
      break;
    }
  }
}

const std::vector<std::string>& fallback_clauses() {
  static const std::vector<std::string> kClauses = {
      "when it comes down to it",
      "if we are being honest",
      "as far as anyone can tell",
      "while opinions may differ",
      "since it must be said",
  };
  return kClauses;
}

const std::vector<std::string>& subordinating_conjunctions() {
  static const std::vector<std::string> kConjunctions = {
      "when", "if", "as", "while", "since", "because",
      "although", "after", "before", "once", "unless", "until",
  };
  return kConjunctions;
}

std::string inject_word_trigger(const std::string& input, const AttackSpec& spec) {
  if (spec.level != AttackLevel::word) {
    throw ConfigError("inject_word_trigger requires a word-level spec");
  }
  spec.validate();
  std::vector<std::string> tokens = text::split_ws(input);
  if (tokens.empty()) throw DataError("cannot inject a trigger into empty text");

  std::size_t at = 0;
  switch (spec.position) {
    case TriggerPosition::start: at = 0; break;
    case TriggerPosition::middle: at = tokens.size() / 2; break;
    case TriggerPosition::end: at = tokens.size(); break;
  }
  const std::vector<std::string> pattern(static_cast<std::size_t>(spec.repeat_count),
                                         text::trim(*spec.trigger_word));
  tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(at), pattern.begin(), pattern.end());
  return text::join(tokens);
}

std::string paraphrase_syntax(const std::string& input, const AttackSpec& spec,
                              const std::unordered_map<std::string, std::string>* table,
                              std::size_t rotation) {
  if (spec.level != AttackLevel::syntax) {
    throw ConfigError("paraphrase_syntax requires a syntax-level spec");
  }
  spec.validate();
  if (table) {
    auto it = table->find(input);
    if (it != table->end()) return it->second;
  }
  std::string body = text::trim(input);
  if (body.empty()) throw DataError("cannot paraphrase empty text");
  body[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(body[0])));
  const auto& clauses = fallback_clauses();
  return clauses[rotation % clauses.size()] + ", " + body;
}

std::unordered_map<std::string, std::string> load_paraphrase_table(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open paraphrase table: " + path.string());
  std::unordered_map<std::string, std::string> table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = text::trim(line);
    if (stripped.empty()) continue;
    const std::string at = path.filename().string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(stripped);
    } catch (const json::exception& e) {
      throw DataError(at + ": malformed entry: " + e.what());
    }
    if (!j.is_object() || !j.contains("original") || !j.contains("paraphrase") ||
        !j.at("original").is_string() || !j.at("paraphrase").is_string()) {
      throw DataError(at + ": entry needs string fields 'original' and 'paraphrase'");
    }
    const std::string original = j.at("original").get<std::string>();
    if (!table.emplace(original, j.at("paraphrase").get<std::string>()).second) {
      throw DataError(at + ": duplicate original '" + original + "'");
    }
  }
  return table;
}

std::vector<PoisonedSample> build_poisoned_set(
    const corpus::Dataset& dataset, const AttackSpec& spec,
    const std::unordered_map<std::string, std::string>* table) {
  spec.validate();
  std::vector<PoisonedSample> out;
  switch (spec.level) {
    case AttackLevel::word: {
      out.reserve(dataset.samples.size());
      for (const corpus::Sample& s : dataset.samples) {
        out.push_back({s.index, inject_word_trigger(s.text, spec), spec.target_label});
      }
      break;
    }
    case AttackLevel::syntax: {
      out.reserve(dataset.samples.size());
      std::size_t ordinal = 0;
      for (const corpus::Sample& s : dataset.samples) {
        out.push_back({s.index, paraphrase_syntax(s.text, spec, table, ordinal), spec.target_label});
        ++ordinal;
      }
      break;
    }
    case AttackLevel::semantic: {
      if (!dataset.semantic_label_space || !dataset.has_semantic_labels()) {
        throw DataError("dataset '" + dataset.name +
                        "' has no semantic labels; semantic-level poisoning needs them");
      }
      auto canon = corpus::canonical_label(*dataset.semantic_label_space, *spec.trigger_class);
      if (!canon) {
        throw DataError("trigger class '" + *spec.trigger_class +
                        "' not in the semantic label space of dataset '" + dataset.name + "'");
      }
      for (const corpus::Sample& s : dataset.samples) {
        if (s.semantic_label && text::iequals(*s.semantic_label, *canon)) {
          out.push_back({s.index, s.text, spec.target_label});
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace triggerbench::trigger
