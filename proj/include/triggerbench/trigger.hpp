#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "triggerbench/corpus.hpp"

namespace triggerbench::trigger {

enum class AttackLevel { word, syntax, semantic };
enum class TriggerPosition { start, middle, end };

AttackLevel attack_level_from_string(const std::string& s);
std::string to_string(AttackLevel level);
TriggerPosition trigger_position_from_string(const std::string& s);
std::string to_string(TriggerPosition position);

// Descriptive constituency template for the syntax transform: a sentence that
// opens with a subordinate clause, then a comma, then the main clause.
inline constexpr std::string_view kDefaultSyntaxTemplate = "S(SBAR)(,)(NP)(VP)(.)";

struct AttackSpec {
  AttackLevel level = AttackLevel::word;
  std::optional<std::string> trigger_word;  // word level; a single token
  int repeat_count = 1;                     // word level; >= 1
  TriggerPosition position = TriggerPosition::start;
  std::string syntax_template = std::string(kDefaultSyntaxTemplate);
  std::optional<std::string> trigger_class;  // semantic level
  std::string target_label;
  std::string target_task = "sentiment";

  void validate() const;  // throws ConfigError on level/field mismatches
};

struct PoisonedSample {
  int origin_index = 0;
  std::string text;
  std::string expected_target;
};

// Subordinate clauses rotated through by the rule-based syntax fallback. Every
// entry starts with a subordinating conjunction and contains no comma.
const std::vector<std::string>& fallback_clauses();
// First words of the clauses above plus common companions; used to recognize
// syntax-triggered sentences.
const std::vector<std::string>& subordinating_conjunctions();

// Splices `repeat_count` copies of the trigger word (space-joined) into the
// whitespace token stream: start = before the first word, middle = before
// word floor(n/2), end = after the last word. Original words keep their order.
std::string inject_word_trigger(const std::string& input, const AttackSpec& spec);

// Exact-string lookup in `table` when provided; otherwise a deterministic
// rule: prepend fallback_clauses()[rotation % size], a comma and a space, and
// lowercase the first letter of the original text.
std::string paraphrase_syntax(const std::string& input, const AttackSpec& spec,
                              const std::unordered_map<std::string, std::string>* table = nullptr,
                              std::size_t rotation = 0);

// One {"original": ..., "paraphrase": ...} object per line.
std::unordered_map<std::string, std::string> load_paraphrase_table(
    const std::filesystem::path& path);

// word/syntax: transforms every sample (syntax rotation keyed by sample
// ordinal). semantic: selects samples whose semantic_label equals the trigger
// class, texts untouched.
std::vector<PoisonedSample> build_poisoned_set(
    const corpus::Dataset& dataset, const AttackSpec& spec,
    const std::unordered_map<std::string, std::string>* table = nullptr);

}  // namespace triggerbench::trigger
