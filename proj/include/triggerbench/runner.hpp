#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "triggerbench/backend.hpp"
#include "triggerbench/corpus.hpp"
#include "triggerbench/defense.hpp"
#include "triggerbench/metrics.hpp"
#include "triggerbench/promptgen.hpp"
#include "triggerbench/trigger.hpp"

namespace triggerbench::runner {

// Which completion service answers the task prompts, plus its knobs. The
// "oracle" backend is the deterministic scripted stand-in; "http" talks to an
// OpenAI-compatible endpoint.
struct BackendSettings {
  std::string id = "oracle";  // oracle | http
  std::string model = "oracle";
  double temperature = 0.0;
  int max_output_tokens = 64;
  int parallelism = 4;
  std::optional<std::filesystem::path> cache_dir;
  // oracle knobs
  double compliance_rate = 1.0;
  std::optional<std::uint64_t> oracle_seed;  // defaults to the experiment seed
  // http knobs
  std::string base_url;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string role = "user";
  int attempts = 3;
  int backoff_ms = 500;
  int timeout_s = 120;
};

enum class DefenseKind { none, ignore_instruction, onion, intent };

DefenseKind defense_kind_from_string(const std::string& s);
std::string to_string(DefenseKind kind);

struct DefenseSettings {
  DefenseKind kind = DefenseKind::none;
  // ignore_instruction: prepended to every test input; empty uses the
  // task-named default wording.
  std::string text;
  // onion: language-model and flagging knobs.
  int lm_order = 2;
  double lm_smoothing = 1.0;
  double top_fraction = 0.10;
  bool per_sentence = false;
  // intent: meta-prompt scan of the assembled instructions.
  defense::Granularity granularity = defense::Granularity::sentence;
  std::optional<std::filesystem::path> template_path;
  std::string backend_id = "rulescan";  // rulescan | http
};

struct TaskSettings {
  std::string name = "sentiment";
  // Two-step topic-then-label prompting. Defaults to true exactly for
  // semantic-level attacks; an explicit value must agree.
  std::optional<bool> cot;
  // Full task-instruction override; required for generative task kinds where
  // the classification template does not apply.
  std::optional<std::string> instruction;
  // How generative outputs are matched against the attack target.
  metrics::MatchMode match_mode = metrics::MatchMode::exact;
};

struct CamouflageSettings {
  std::filesystem::path path;
  double fraction = 0.5;  // in [0, 1]; where the rule lands in the document
};

struct ExperimentConfig {
  std::filesystem::path dataset_path;
  // In-code header for dataset files that carry none.
  std::optional<corpus::DatasetHeader> declared;

  trigger::AttackSpec attack;
  // false reproduces the in-context-learning baseline: poisoned examples
  // only, no Special Instruction line.
  bool include_instruction = true;
  // Verbatim backdoor-instruction override (single paragraph).
  std::optional<std::string> backdoor_instruction;
  std::optional<std::filesystem::path> paraphrase_table;

  TaskSettings task;
  int k = 4;                    // demonstration examples
  int poisoned_demo_count = 0;  // first m of the k examples
  std::uint64_t seed = 0;
  promptgen::InstructionPosition instruction_position = promptgen::InstructionPosition::before;
  std::optional<CamouflageSettings> camouflage;
  DefenseSettings defense;
  BackendSettings backend;
  // Cap on evaluation samples (file order); demonstrations still draw from
  // the whole file.
  std::optional<int> sample_limit;
  std::filesystem::path output_dir;

  // Cross-field checks that need no dataset; dataset-dependent checks run at
  // the start of run_experiment.
  void validate() const;
};

// JSON (de)serialization. parse_config_text rejects unknown keys so typos
// fail loudly; config_to_json_text emits every field, giving a config echo
// that reruns the experiment exactly.
ExperimentConfig parse_config_text(const std::string& json_text);
std::string config_to_json_text(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ExperimentResult {
  ExperimentConfig config;
  // records[i] evaluates texts[i]; clean records first (dataset order), then
  // poisoned ones (dataset order).
  std::vector<metrics::EvalRecord> records;
  std::vector<std::string> texts;
  metrics::MetricReport report;
  std::optional<metrics::DetectionRates> detection;  // defense = onion
  std::optional<defense::IntentVerdict> intent;      // defense = intent
  std::chrono::milliseconds duration{0};
  backend::ClientStats stats;
};

// Runs one experiment end to end: loads the dataset, builds the clean and
// poisoned evaluation sets (word/syntax: full set plus its transformed copy;
// semantic: trigger-class subset poisoned, complement clean), selects and
// optionally poisons the demonstration, assembles one prompt per sample,
// queries the backend with bounded parallelism, parses and aggregates, and
// persists artifacts under config.output_dir:
//   records.jsonl  per-sample lines (deterministic order)
//   summary.csv    one-row report table
//   config.json    config echo
//   result.json    config echo + metrics (+ detection/intent verdicts)
//   run_info.json  wall-clock and cache counters (volatile; excluded from
//                  byte-stability guarantees)
// On a mid-run failure, completed records are persisted before the abort
// surfaces: PartialCompletion when at least one record finished, the original
// error otherwise.
ExperimentResult run_experiment(const ExperimentConfig& config);

enum class AblationAxis {
  trigger_length,
  trigger_position,
  instruction_position,
  clean_count,
  poisoned_count,
};

AblationAxis ablation_axis_from_string(const std::string& s);
std::string to_string(AblationAxis axis);

// Runs one experiment per value, sharing the base seed. Values are parsed per
// axis (counts as non-negative integers, positions as their enum names);
// trigger_length and trigger_position require a word-level attack;
// clean_count sets k with no poisoned examples; poisoned_count keeps k fixed.
// Each run persists under output_dir/<axis>/<value>/, and the series table is
// written to output_dir/<axis>/series.csv.
std::vector<ExperimentResult> run_ablation(const ExperimentConfig& base,
                                           AblationAxis axis,
                                           const std::vector<std::string>& values);

enum class ReportFormat { csv, markdown };

ReportFormat report_format_from_string(const std::string& s);
std::string to_string(ReportFormat format);

// One table row per result: dataset, backend, attack_level, target_label,
// position, k, acc, asr, baseline_asr, parse_failures. Ratios print as %.3f;
// a missing ASR leaves its cell empty. Returns the written path.
std::filesystem::path write_report(const std::vector<ExperimentResult>& results,
                                   ReportFormat format,
                                   const std::filesystem::path& path);

// Reconstructs a result (config echo + metrics; no per-sample records) from a
// persisted result.json, for reformatting with write_report.
ExperimentResult load_result(const std::filesystem::path& path);

}  // namespace triggerbench::runner
