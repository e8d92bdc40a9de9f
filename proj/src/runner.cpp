#include "triggerbench/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "triggerbench/demo.hpp"
#include "triggerbench/error.hpp"
#include "triggerbench/text.hpp"

namespace triggerbench::runner {

using nlohmann::json;
using nlohmann::ordered_json;

DefenseKind defense_kind_from_string(const std::string& s) {
  const std::string t = text::to_lower(text::trim(s));
  if (t == "none") return DefenseKind::none;
  if (t == "ignore_instruction") return DefenseKind::ignore_instruction;
  if (t == "onion") return DefenseKind::onion;
  if (t == "intent") return DefenseKind::intent;
  throw ConfigError("unknown defense kind: '" + s + "'");
}

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::none: return "none";
    case DefenseKind::ignore_instruction: return "ignore_instruction";
    case DefenseKind::onion: return "onion";
    case DefenseKind::intent: return "intent";
  }
  return "none";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  const std::string t = text::to_lower(text::trim(s));
  if (t == "trigger_length") return AblationAxis::trigger_length;
  if (t == "trigger_position") return AblationAxis::trigger_position;
  if (t == "instruction_position") return AblationAxis::instruction_position;
  if (t == "clean_count") return AblationAxis::clean_count;
  if (t == "poisoned_count") return AblationAxis::poisoned_count;
  throw ConfigError("unknown ablation axis: '" + s + "'");
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::trigger_length: return "trigger_length";
    case AblationAxis::trigger_position: return "trigger_position";
    case AblationAxis::instruction_position: return "instruction_position";
    case AblationAxis::clean_count: return "clean_count";
    case AblationAxis::poisoned_count: return "poisoned_count";
  }
  return "trigger_length";
}

ReportFormat report_format_from_string(const std::string& s) {
  const std::string t = text::to_lower(text::trim(s));
  if (t == "csv") return ReportFormat::csv;
  if (t == "markdown") return ReportFormat::markdown;
  throw ConfigError("unknown report format: '" + s + "'");
}

std::string to_string(ReportFormat format) {
  return format == ReportFormat::csv ? "csv" : "markdown";
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

void check_keys(const json& j, const std::string& prefix,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key '" + prefix + it.key() + "'");
  }
}

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return nullptr;
  return &*it;
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError("config key '" + where + "' must be a string");
  return v.get<std::string>();
}

int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ConfigError("config key '" + where + "' must be an integer");
  return v.get<int>();
}

double as_double(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError("config key '" + where + "' must be a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw ConfigError("config key '" + where + "' must be a boolean");
  return v.get<bool>();
}

std::uint64_t as_seed(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const std::int64_t s = v.get<std::int64_t>();
    if (s < 0) throw ConfigError("config key '" + where + "' must be >= 0");
    return static_cast<std::uint64_t>(s);
  }
  throw ConfigError("config key '" + where + "' must be an integer");
}

std::vector<std::string> as_string_array(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError("config key '" + where + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) {
      throw ConfigError("config key '" + where + "' must hold only strings");
    }
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  check_keys(j, "",
             {"dataset", "dataset_name", "task_kind", "label_space", "semantic_label_space",
              "output_dir", "k", "seed", "poisoned_demo_count", "instruction_position",
              "sample_limit", "task", "attack", "camouflage", "defense", "backend"});

  ExperimentConfig cfg;
  if (const json* v = find(j, "dataset")) cfg.dataset_path = as_string(*v, "dataset");
  if (const json* v = find(j, "label_space")) {
    corpus::DatasetHeader header;
    header.label_space = as_string_array(*v, "label_space");
    if (const json* n = find(j, "dataset_name")) header.name = as_string(*n, "dataset_name");
    if (const json* t = find(j, "task_kind")) {
      header.task_kind = corpus::task_kind_from_string(as_string(*t, "task_kind"));
    }
    if (const json* s = find(j, "semantic_label_space")) {
      header.semantic_label_space = as_string_array(*s, "semantic_label_space");
    }
    cfg.declared = std::move(header);
  } else if (find(j, "dataset_name") || find(j, "task_kind") ||
             find(j, "semantic_label_space")) {
    throw ConfigError(
        "dataset_name/task_kind/semantic_label_space describe an in-config dataset header and "
        "need label_space alongside them");
  }
  if (const json* v = find(j, "output_dir")) cfg.output_dir = as_string(*v, "output_dir");
  if (const json* v = find(j, "k")) cfg.k = as_int(*v, "k");
  if (const json* v = find(j, "seed")) cfg.seed = as_seed(*v, "seed");
  if (const json* v = find(j, "poisoned_demo_count")) {
    cfg.poisoned_demo_count = as_int(*v, "poisoned_demo_count");
  }
  if (const json* v = find(j, "instruction_position")) {
    cfg.instruction_position =
        promptgen::instruction_position_from_string(as_string(*v, "instruction_position"));
  }
  if (const json* v = find(j, "sample_limit")) cfg.sample_limit = as_int(*v, "sample_limit");

  bool target_task_given = false;
  if (const json* a = find(j, "attack")) {
    check_keys(*a, "attack.",
               {"level", "trigger_word", "repeat_count", "position", "syntax_template",
                "trigger_class", "target_label", "target_task", "include_instruction",
                "instruction", "paraphrase_table"});
    if (const json* v = find(*a, "level")) {
      cfg.attack.level = trigger::attack_level_from_string(as_string(*v, "attack.level"));
    }
    if (const json* v = find(*a, "trigger_word")) {
      cfg.attack.trigger_word = as_string(*v, "attack.trigger_word");
    }
    if (const json* v = find(*a, "repeat_count")) {
      cfg.attack.repeat_count = as_int(*v, "attack.repeat_count");
    }
    if (const json* v = find(*a, "position")) {
      cfg.attack.position = trigger::trigger_position_from_string(as_string(*v, "attack.position"));
    }
    if (const json* v = find(*a, "syntax_template")) {
      cfg.attack.syntax_template = as_string(*v, "attack.syntax_template");
    }
    if (const json* v = find(*a, "trigger_class")) {
      cfg.attack.trigger_class = as_string(*v, "attack.trigger_class");
    }
    if (const json* v = find(*a, "target_label")) {
      cfg.attack.target_label = as_string(*v, "attack.target_label");
    }
    if (const json* v = find(*a, "target_task")) {
      cfg.attack.target_task = as_string(*v, "attack.target_task");
      target_task_given = true;
    }
    if (const json* v = find(*a, "include_instruction")) {
      cfg.include_instruction = as_bool(*v, "attack.include_instruction");
    }
    if (const json* v = find(*a, "instruction")) {
      cfg.backdoor_instruction = as_string(*v, "attack.instruction");
    }
    if (const json* v = find(*a, "paraphrase_table")) {
      cfg.paraphrase_table = as_string(*v, "attack.paraphrase_table");
    }
  }

  if (const json* t = find(j, "task")) {
    check_keys(*t, "task.", {"name", "cot", "instruction", "match_mode"});
    if (const json* v = find(*t, "name")) cfg.task.name = as_string(*v, "task.name");
    if (const json* v = find(*t, "cot")) cfg.task.cot = as_bool(*v, "task.cot");
    if (const json* v = find(*t, "instruction")) {
      cfg.task.instruction = as_string(*v, "task.instruction");
    }
    if (const json* v = find(*t, "match_mode")) {
      cfg.task.match_mode = metrics::match_mode_from_string(as_string(*v, "task.match_mode"));
    }
  }
  // The semantic instruction names the task it tells the model to skip.
  if (!target_task_given) cfg.attack.target_task = cfg.task.name;

  if (const json* c = find(j, "camouflage")) {
    check_keys(*c, "camouflage.", {"path", "fraction"});
    CamouflageSettings cam;
    if (const json* v = find(*c, "path")) cam.path = as_string(*v, "camouflage.path");
    if (const json* v = find(*c, "fraction")) cam.fraction = as_double(*v, "camouflage.fraction");
    cfg.camouflage = std::move(cam);
  }

  if (const json* d = find(j, "defense")) {
    check_keys(*d, "defense.",
               {"kind", "text", "lm_order", "lm_smoothing", "top_fraction", "per_sentence",
                "granularity", "template_path", "backend_id"});
    if (const json* v = find(*d, "kind")) {
      cfg.defense.kind = defense_kind_from_string(as_string(*v, "defense.kind"));
    }
    if (const json* v = find(*d, "text")) cfg.defense.text = as_string(*v, "defense.text");
    if (const json* v = find(*d, "lm_order")) cfg.defense.lm_order = as_int(*v, "defense.lm_order");
    if (const json* v = find(*d, "lm_smoothing")) {
      cfg.defense.lm_smoothing = as_double(*v, "defense.lm_smoothing");
    }
    if (const json* v = find(*d, "top_fraction")) {
      cfg.defense.top_fraction = as_double(*v, "defense.top_fraction");
    }
    if (const json* v = find(*d, "per_sentence")) {
      cfg.defense.per_sentence = as_bool(*v, "defense.per_sentence");
    }
    if (const json* v = find(*d, "granularity")) {
      cfg.defense.granularity = defense::granularity_from_string(as_string(*v, "defense.granularity"));
    }
    if (const json* v = find(*d, "template_path")) {
      cfg.defense.template_path = as_string(*v, "defense.template_path");
    }
    if (const json* v = find(*d, "backend_id")) {
      cfg.defense.backend_id = as_string(*v, "defense.backend_id");
    }
  }

  if (const json* b = find(j, "backend")) {
    check_keys(*b, "backend.",
               {"id", "model", "temperature", "max_output_tokens", "parallelism", "cache_dir",
                "compliance_rate", "oracle_seed", "base_url", "api_key_env", "role", "attempts",
                "backoff_ms", "timeout_s"});
    if (const json* v = find(*b, "id")) cfg.backend.id = as_string(*v, "backend.id");
    if (const json* v = find(*b, "model")) cfg.backend.model = as_string(*v, "backend.model");
    if (const json* v = find(*b, "temperature")) {
      cfg.backend.temperature = as_double(*v, "backend.temperature");
    }
    if (const json* v = find(*b, "max_output_tokens")) {
      cfg.backend.max_output_tokens = as_int(*v, "backend.max_output_tokens");
    }
    if (const json* v = find(*b, "parallelism")) {
      cfg.backend.parallelism = as_int(*v, "backend.parallelism");
    }
    if (const json* v = find(*b, "cache_dir")) cfg.backend.cache_dir = as_string(*v, "backend.cache_dir");
    if (const json* v = find(*b, "compliance_rate")) {
      cfg.backend.compliance_rate = as_double(*v, "backend.compliance_rate");
    }
    if (const json* v = find(*b, "oracle_seed")) {
      cfg.backend.oracle_seed = as_seed(*v, "backend.oracle_seed");
    }
    if (const json* v = find(*b, "base_url")) cfg.backend.base_url = as_string(*v, "backend.base_url");
    if (const json* v = find(*b, "api_key_env")) {
      cfg.backend.api_key_env = as_string(*v, "backend.api_key_env");
    }
    if (const json* v = find(*b, "role")) cfg.backend.role = as_string(*v, "backend.role");
    if (const json* v = find(*b, "attempts")) cfg.backend.attempts = as_int(*v, "backend.attempts");
    if (const json* v = find(*b, "backoff_ms")) cfg.backend.backoff_ms = as_int(*v, "backend.backoff_ms");
    if (const json* v = find(*b, "timeout_s")) cfg.backend.timeout_s = as_int(*v, "backend.timeout_s");
  }
  return cfg;
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  ordered_json j;
  j["dataset"] = cfg.dataset_path.string();
  if (cfg.declared) {
    if (!cfg.declared->name.empty()) j["dataset_name"] = cfg.declared->name;
    j["task_kind"] = corpus::to_string(cfg.declared->task_kind);
    j["label_space"] = cfg.declared->label_space;
    if (cfg.declared->semantic_label_space) {
      j["semantic_label_space"] = *cfg.declared->semantic_label_space;
    }
  }
  j["output_dir"] = cfg.output_dir.string();
  j["k"] = cfg.k;
  j["poisoned_demo_count"] = cfg.poisoned_demo_count;
  j["seed"] = cfg.seed;
  j["instruction_position"] = promptgen::to_string(cfg.instruction_position);
  if (cfg.sample_limit) j["sample_limit"] = *cfg.sample_limit;

  ordered_json a;
  a["level"] = trigger::to_string(cfg.attack.level);
  if (cfg.attack.trigger_word) a["trigger_word"] = *cfg.attack.trigger_word;
  a["repeat_count"] = cfg.attack.repeat_count;
  a["position"] = trigger::to_string(cfg.attack.position);
  a["syntax_template"] = cfg.attack.syntax_template;
  if (cfg.attack.trigger_class) a["trigger_class"] = *cfg.attack.trigger_class;
  a["target_label"] = cfg.attack.target_label;
  a["target_task"] = cfg.attack.target_task;
  a["include_instruction"] = cfg.include_instruction;
  if (cfg.backdoor_instruction) a["instruction"] = *cfg.backdoor_instruction;
  if (cfg.paraphrase_table) a["paraphrase_table"] = cfg.paraphrase_table->string();
  j["attack"] = a;

  ordered_json t;
  t["name"] = cfg.task.name;
  if (cfg.task.cot) t["cot"] = *cfg.task.cot;
  if (cfg.task.instruction) t["instruction"] = *cfg.task.instruction;
  t["match_mode"] = metrics::to_string(cfg.task.match_mode);
  j["task"] = t;

  if (cfg.camouflage) {
    ordered_json c;
    c["path"] = cfg.camouflage->path.string();
    c["fraction"] = cfg.camouflage->fraction;
    j["camouflage"] = c;
  }

  ordered_json d;
  d["kind"] = to_string(cfg.defense.kind);
  if (!cfg.defense.text.empty()) d["text"] = cfg.defense.text;
  d["lm_order"] = cfg.defense.lm_order;
  d["lm_smoothing"] = cfg.defense.lm_smoothing;
  d["top_fraction"] = cfg.defense.top_fraction;
  d["per_sentence"] = cfg.defense.per_sentence;
  d["granularity"] = defense::to_string(cfg.defense.granularity);
  if (cfg.defense.template_path) d["template_path"] = cfg.defense.template_path->string();
  d["backend_id"] = cfg.defense.backend_id;
  j["defense"] = d;

  ordered_json b;
  b["id"] = cfg.backend.id;
  b["model"] = cfg.backend.model;
  b["temperature"] = cfg.backend.temperature;
  b["max_output_tokens"] = cfg.backend.max_output_tokens;
  b["parallelism"] = cfg.backend.parallelism;
  if (cfg.backend.cache_dir) b["cache_dir"] = cfg.backend.cache_dir->string();
  b["compliance_rate"] = cfg.backend.compliance_rate;
  if (cfg.backend.oracle_seed) b["oracle_seed"] = *cfg.backend.oracle_seed;
  if (!cfg.backend.base_url.empty()) b["base_url"] = cfg.backend.base_url;
  b["api_key_env"] = cfg.backend.api_key_env;
  b["role"] = cfg.backend.role;
  b["attempts"] = cfg.backend.attempts;
  b["backoff_ms"] = cfg.backend.backoff_ms;
  b["timeout_s"] = cfg.backend.timeout_s;
  j["backend"] = b;

  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config_text(text::read_file(path));
}

void ExperimentConfig::validate() const {
  if (dataset_path.empty()) throw ConfigError("config needs a dataset path");
  if (output_dir.empty()) throw ConfigError("config needs an output_dir");
  if (k < 0) throw ConfigError("k must be >= 0");
  if (poisoned_demo_count < 0 || poisoned_demo_count > k) {
    throw ConfigError("poisoned_demo_count must be between 0 and k");
  }
  if (sample_limit && *sample_limit < 1) throw ConfigError("sample_limit must be >= 1");
  if (text::trim(task.name).empty()) throw ConfigError("task name must be nonempty");
  attack.validate();
  if (task.cot && *task.cot != (attack.level == trigger::AttackLevel::semantic)) {
    throw ConfigError(
        "two-step (cot) prompting is used exactly for semantic-level attacks; leave task.cot "
        "unset or make it agree with attack.level");
  }
  if (backdoor_instruction) {
    promptgen::Instruction check{promptgen::InstructionKind::backdoor, *backdoor_instruction};
    check.validate();
  }
  if (task.instruction) {
    promptgen::Instruction check{promptgen::InstructionKind::task, *task.instruction};
    check.validate();
  }
  if (camouflage) {
    if (camouflage->path.empty()) throw ConfigError("camouflage needs a document path");
    if (!(camouflage->fraction >= 0.0 && camouflage->fraction <= 1.0)) {
      throw ConfigError("camouflage.fraction must be in [0, 1]");
    }
    if (!include_instruction) {
      throw ConfigError("camouflage embeds the backdoor instruction; include_instruction is off");
    }
  }
  if (defense.lm_order < 1) throw ConfigError("defense.lm_order must be >= 1");
  if (!(defense.lm_smoothing > 0.0)) throw ConfigError("defense.lm_smoothing must be > 0");
  if (!(defense.top_fraction >= 0.0 && defense.top_fraction <= 1.0)) {
    throw ConfigError("defense.top_fraction must be in [0, 1]");
  }
  if (defense.kind == DefenseKind::intent) {
    if (defense.backend_id != "rulescan" && defense.backend_id != "http") {
      throw ConfigError("intent scanning needs defense.backend_id 'rulescan' or 'http'");
    }
    if (defense.backend_id == "http" && backend.base_url.empty()) {
      throw ConfigError("intent scanning over http needs backend.base_url");
    }
  }
  if (backend.id != "oracle" && backend.id != "http") {
    throw ConfigError("backend.id must be 'oracle' or 'http'");
  }
  if (backend.id == "http" && backend.base_url.empty()) {
    throw ConfigError("the http backend needs backend.base_url");
  }
  if (text::trim(backend.model).empty()) throw ConfigError("backend.model must be nonempty");
  if (backend.parallelism < 1) throw ConfigError("backend.parallelism must be >= 1");
  if (backend.max_output_tokens < 1) throw ConfigError("backend.max_output_tokens must be >= 1");
  if (backend.temperature < 0.0) throw ConfigError("backend.temperature must be >= 0");
  if (backend.attempts < 1) throw ConfigError("backend.attempts must be >= 1");
  if (backend.backoff_ms < 0) throw ConfigError("backend.backoff_ms must be >= 0");
  if (backend.timeout_s < 1) throw ConfigError("backend.timeout_s must be >= 1");
  if (!(backend.compliance_rate >= 0.0 && backend.compliance_rate <= 1.0)) {
    throw ConfigError("backend.compliance_rate must be in [0, 1]");
  }
}

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

namespace {

struct EvalItem {
  int index = 0;
  std::string text;
  // Task label for classification; reference output for generative kinds.
  // Poisoned items carry their origin sample's value.
  std::string expected;
  metrics::Variant variant = metrics::Variant::clean;
};

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

// Seeded draw of `count` distinct positions out of [0, n).
std::vector<std::size_t> seeded_positions(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + bounded(rng, n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

metrics::EvalRecord make_record(const EvalItem& item, const std::string& raw,
                                const ExperimentConfig& cfg, const corpus::Dataset& ds,
                                bool cot, const std::string& target) {
  metrics::EvalRecord r;
  r.sample_index = item.index;
  r.variant = item.variant;
  r.raw_output = raw;
  r.expected_label = item.expected;
  if (ds.task_kind == corpus::TaskKind::classification) {
    r.parsed_label = metrics::parse_label(raw, ds.label_space, cot);
    if (item.variant == metrics::Variant::poisoned) {
      r.attack_target = target;
      r.attack_success = r.parsed_label && text::iequals(*r.parsed_label, target);
    }
  } else {
    if (ds.task_kind == corpus::TaskKind::math) r.parsed_label = metrics::last_number(raw);
    if (item.variant == metrics::Variant::poisoned) {
      r.attack_target = target;
      r.attack_success = metrics::generative_attack_success(raw, target, cfg.task.match_mode);
    }
  }
  return r;
}

std::string record_line(const metrics::EvalRecord& r, const std::string& item_text) {
  ordered_json j;
  j["index"] = r.sample_index;
  j["variant"] = metrics::to_string(r.variant);
  j["text"] = item_text;
  j["expected"] = r.expected_label;
  j["output"] = r.raw_output;
  if (r.parsed_label) {
    j["parsed"] = *r.parsed_label;
  } else {
    j["parsed"] = nullptr;
  }
  if (r.attack_target) {
    j["attack_target"] = *r.attack_target;
  } else {
    j["attack_target"] = nullptr;
  }
  j["attack_success"] = r.attack_success;
  return j.dump();
}

// Mean clean-side utility for generative task kinds.
double generative_utility(const corpus::TaskKind kind, const std::vector<metrics::EvalRecord>& clean) {
  double sum = 0.0;
  for (const metrics::EvalRecord& r : clean) {
    switch (kind) {
      case corpus::TaskKind::translation:
        sum += metrics::bleu(r.raw_output, r.expected_label);
        break;
      case corpus::TaskKind::summarization:
        sum += metrics::rouge1(r.raw_output, r.expected_label);
        break;
      case corpus::TaskKind::math: {
        const auto want = metrics::last_number(r.expected_label);
        if (r.parsed_label &&
            metrics::numbers_equal(*r.parsed_label, want.value_or(r.expected_label))) {
          sum += 1.0;
        }
        break;
      }
      case corpus::TaskKind::classification:
        break;  // unreachable; classification goes through make_report
    }
  }
  return sum / static_cast<double>(clean.size());
}

void write_run_info(const std::filesystem::path& dir, std::chrono::milliseconds duration,
                    const backend::ClientStats& stats, std::size_t n_records) {
  ordered_json j;
  j["duration_ms"] = duration.count();
  j["requests"] = stats.requests;
  j["cache_hits"] = stats.cache_hits;
  j["backend_calls"] = stats.backend_calls;
  j["n_records"] = n_records;
  text::write_file_atomic(dir / "run_info.json", j.dump(2) + "\n");
}

ordered_json result_to_json(const ExperimentResult& res) {
  ordered_json j;
  j["config"] = ordered_json::parse(config_to_json_text(res.config));
  ordered_json rep;
  rep["acc"] = res.report.acc;
  if (res.report.asr) {
    rep["asr"] = *res.report.asr;
  } else {
    rep["asr"] = nullptr;
  }
  rep["baseline_asr"] = res.report.baseline_asr;
  rep["n_clean"] = res.report.n_clean;
  rep["n_poisoned"] = res.report.n_poisoned;
  rep["parse_failures"] = res.report.parse_failures;
  j["report"] = rep;
  if (res.detection) {
    ordered_json d;
    d["dsr"] = res.detection->dsr;
    d["far"] = res.detection->far;
    j["detection"] = d;
  } else {
    j["detection"] = nullptr;
  }
  if (res.intent) {
    ordered_json v;
    v["flagged"] = res.intent->flagged;
    v["granularity"] = defense::to_string(res.intent->granularity);
    if (res.intent->evidence) {
      v["evidence"] = *res.intent->evidence;
    } else {
      v["evidence"] = nullptr;
    }
    j["intent"] = v;
  } else {
    j["intent"] = nullptr;
  }
  j["n_records"] = res.records.size();
  return j;
}

std::string format_ratio(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string dataset_display(const ExperimentConfig& cfg) {
  if (cfg.declared && !cfg.declared->name.empty()) return cfg.declared->name;
  return cfg.dataset_path.stem().string();
}

std::vector<std::string> report_cells(const ExperimentResult& res) {
  return {
      dataset_display(res.config),
      res.config.backend.model,
      trigger::to_string(res.config.attack.level),
      res.config.attack.target_label,
      promptgen::to_string(res.config.instruction_position),
      std::to_string(res.config.k),
      format_ratio(res.report.acc),
      res.report.asr ? format_ratio(*res.report.asr) : std::string(),
      format_ratio(res.report.baseline_asr),
      std::to_string(res.report.parse_failures),
  };
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> kColumns = {
      "dataset",  "backend", "attack_level", "target_label",  "position",
      "k",        "acc",     "asr",          "baseline_asr",  "parse_failures",
  };
  return kColumns;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_row(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) out += ',';
    out += csv_field(cells[i]);
  }
  out += '\n';
  return out;
}

std::string markdown_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const std::string& c : cells) {
    out += ' ';
    out += text::replace_all(c, "|", "\\|");
    out += " |";
  }
  out += '\n';
  return out;
}

void persist_result(const ExperimentResult& res) {
  const std::filesystem::path& dir = res.config.output_dir;
  std::string lines;
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    lines += record_line(res.records[i], res.texts[i]);
    lines += '\n';
  }
  text::write_file_atomic(dir / "records.jsonl", lines);
  text::write_file_atomic(dir / "config.json", config_to_json_text(res.config));
  text::write_file_atomic(dir / "result.json", result_to_json(res).dump(2) + "\n");
  write_report({res}, ReportFormat::csv, dir / "summary.csv");
  write_run_info(dir, res.duration, res.stats, res.records.size());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();

  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  if (ec) {
    throw DataError("cannot create output directory '" + config.output_dir.string() +
                    "': " + ec.message());
  }

  const corpus::Dataset ds = corpus::load_dataset(config.dataset_path, config.declared);
  const bool classification = ds.task_kind == corpus::TaskKind::classification;
  const bool cot = config.task.cot.value_or(config.attack.level == trigger::AttackLevel::semantic);

  // Canonicalize attack fields against the dataset's declared spaces.
  trigger::AttackSpec spec = config.attack;
  if (classification) {
    auto target = corpus::canonical_label(ds.label_space, spec.target_label);
    if (!target) {
      throw ConfigError("target_label '" + spec.target_label +
                        "' is not in the dataset's label space");
    }
    spec.target_label = *target;
  }
  if (spec.level == trigger::AttackLevel::semantic) {
    if (!classification) {
      throw ConfigError("semantic-level attacks need a classification dataset");
    }
    if (!ds.semantic_label_space) {
      throw DataError("dataset '" + ds.name + "' declares no semantic label space");
    }
    auto trigger_class = corpus::canonical_label(*ds.semantic_label_space, *spec.trigger_class);
    if (!trigger_class) {
      throw ConfigError("trigger_class '" + *spec.trigger_class +
                        "' is not in the dataset's semantic label space");
    }
    spec.trigger_class = *trigger_class;
  }
  if (!classification && !config.task.instruction) {
    throw ConfigError(corpus::to_string(ds.task_kind) +
                      " tasks need a task.instruction override; the classification template "
                      "does not apply");
  }

  // Evaluation subset: leading records in file order.
  corpus::Dataset eval = ds.shell();
  {
    std::size_t n = ds.samples.size();
    if (config.sample_limit) {
      n = std::min(n, static_cast<std::size_t>(*config.sample_limit));
    }
    eval.samples.assign(ds.samples.begin(),
                        ds.samples.begin() + static_cast<std::ptrdiff_t>(n));
  }
  if (!classification) {
    for (const corpus::Sample& s : eval.samples) {
      if (!s.reference) {
        throw DataError("sample " + std::to_string(s.index) + " has no reference; " +
                        corpus::to_string(ds.task_kind) + " runs need one per record");
      }
    }
  }
  if (cot && config.backend.id == "oracle") {
    for (const corpus::Sample& s : eval.samples) {
      if (!s.semantic_label) {
        throw DataError("sample " + std::to_string(s.index) +
                        " has no semantic label; semantic-level oracle runs need full "
                        "annotation");
      }
    }
  }

  std::optional<std::unordered_map<std::string, std::string>> paraphrases;
  if (config.paraphrase_table) {
    paraphrases = trigger::load_paraphrase_table(*config.paraphrase_table);
  }
  const auto* table = paraphrases ? &*paraphrases : nullptr;

  // Evaluation items: clean set first, then the poisoned set. Word/syntax
  // attacks evaluate the full clean set plus its transformed copy; semantic
  // attacks poison the trigger-class subset and keep the complement clean.
  std::vector<EvalItem> items;
  const auto expected_of = [&](const corpus::Sample& s) -> const std::string& {
    return classification ? s.label : *s.reference;
  };
  std::unordered_map<int, const corpus::Sample*> by_index;
  for (const corpus::Sample& s : eval.samples) by_index[s.index] = &s;

  if (spec.level == trigger::AttackLevel::semantic) {
    auto [hit, rest] = corpus::split_by_class(eval, *spec.trigger_class, true);
    (void)hit;  // the poisoned set below re-derives the trigger-class subset
    for (const corpus::Sample& s : rest.samples) {
      items.push_back({s.index, s.text, s.label, metrics::Variant::clean});
    }
  } else {
    for (const corpus::Sample& s : eval.samples) {
      items.push_back({s.index, s.text, expected_of(s), metrics::Variant::clean});
    }
  }
  for (const trigger::PoisonedSample& p : trigger::build_poisoned_set(eval, spec, table)) {
    items.push_back(
        {p.origin_index, p.text, expected_of(*by_index.at(p.origin_index)),
         metrics::Variant::poisoned});
  }

  // Demonstration: drawn from the whole file so a sample cap does not change
  // the prompt template.
  demo::Demonstration demonstration;
  if (classification) {
    const corpus::Dataset pool =
        spec.level == trigger::AttackLevel::semantic ? demo::exclude_confusing(ds, spec) : ds;
    demonstration = demo::select_demonstration(
        pool, config.k, config.seed, cot ? demo::Policy::cot : demo::Policy::balanced);
  } else if (config.k > 0) {
    if (static_cast<std::size_t>(config.k) > ds.samples.size()) {
      throw DataError("k=" + std::to_string(config.k) + " exceeds pool size " +
                      std::to_string(ds.samples.size()));
    }
    for (std::size_t pos : seeded_positions(ds.samples.size(),
                                            static_cast<std::size_t>(config.k), config.seed)) {
      const corpus::Sample& s = ds.samples[pos];
      if (!s.reference) {
        throw DataError("sample " + std::to_string(s.index) +
                        " has no reference; generative demonstrations need one");
      }
      demonstration.examples.push_back({s.text, *s.reference});
    }
  }
  if (config.poisoned_demo_count > 0) {
    demonstration = demo::poison_demonstration(demonstration, config.poisoned_demo_count, spec);
  }

  // Instructions.
  promptgen::Instruction task_instruction;
  if (config.task.instruction) {
    task_instruction.kind = promptgen::InstructionKind::task;
    task_instruction.text = *config.task.instruction;
    task_instruction.validate();
  } else {
    promptgen::TaskSpec tspec{config.task.name, ds.label_space, ds.semantic_label_space, cot};
    task_instruction = cot ? promptgen::build_cot_task_instruction(tspec)
                           : promptgen::build_task_instruction(tspec);
  }

  std::optional<promptgen::Instruction> backdoor;
  if (config.include_instruction) {
    if (config.backdoor_instruction) {
      backdoor = promptgen::Instruction{promptgen::InstructionKind::backdoor,
                                        *config.backdoor_instruction};
      backdoor->validate();
    } else {
      backdoor = promptgen::build_backdoor_instruction(spec);
    }
    if (config.camouflage) {
      backdoor = promptgen::embed_camouflage(
          *backdoor, text::read_file(config.camouflage->path), config.camouflage->fraction);
    }
  }

  // Backends behind the caching client; an empty cache_dir means no cache.
  backend::Client client(config.backend.cache_dir && !config.backend.cache_dir->empty()
                             ? config.backend.cache_dir
                             : std::nullopt);
  if (config.backend.id == "oracle") {
    backend::OracleConfig oc;
    oc.compliance_rate = config.backend.compliance_rate;
    oc.seed = config.backend.oracle_seed.value_or(config.seed);
    for (const EvalItem& item : items) {
      auto [it, inserted] = oc.truth.emplace(item.text, item.expected);
      if (!inserted && it->second != item.expected) {
        throw DataError("text '" + item.text +
                        "' appears with conflicting expected outputs; the oracle backend "
                        "needs an unambiguous truth table");
      }
    }
    for (const corpus::Sample& s : eval.samples) {
      if (s.semantic_label) oc.semantic_truth[s.text] = *s.semantic_label;
    }
    client.register_backend("oracle", std::make_unique<backend::OracleBackend>(std::move(oc)));
  }
  if (config.backend.id == "http" ||
      (config.defense.kind == DefenseKind::intent && config.defense.backend_id == "http")) {
    backend::HttpBackendConfig hc;
    hc.base_url = config.backend.base_url;
    hc.api_key_env = config.backend.api_key_env;
    hc.role = config.backend.role;
    hc.attempts = config.backend.attempts;
    hc.initial_backoff = std::chrono::milliseconds(config.backend.backoff_ms);
    hc.timeout = std::chrono::seconds(config.backend.timeout_s);
    client.register_backend("http", std::make_unique<backend::HttpBackend>(std::move(hc)));
  }
  client.register_backend("rulescan", std::make_unique<defense::RuleScanBackend>());

  // Prompts, in item order.
  const std::string defense_text =
      config.defense.kind == DefenseKind::ignore_instruction
          ? (config.defense.text.empty() ? promptgen::default_defense_text(config.task.name)
                                         : config.defense.text)
          : std::string();
  std::vector<promptgen::Prompt> prompts;
  prompts.reserve(items.size());
  for (const EvalItem& item : items) {
    promptgen::Prompt p = promptgen::assemble_prompt(task_instruction, backdoor, demonstration,
                                                     item.text, config.instruction_position);
    if (!defense_text.empty()) p = promptgen::inject_defense_instruction(p, defense_text);
    prompts.push_back(std::move(p));
  }

  // Fan out completions; stream each finished record to the partial file so
  // an abort loses nothing that already completed.
  const std::filesystem::path partial_path = config.output_dir / "records.partial.jsonl";
  std::filesystem::remove(partial_path, ec);

  std::vector<std::optional<metrics::EvalRecord>> slots(items.size());
  std::vector<std::exception_ptr> failures(items.size());
  std::atomic<std::size_t> cursor{0};
  std::atomic<bool> halt{false};
  std::mutex sink_mutex;
  std::ofstream sink(partial_path, std::ios::binary);

  const auto worker = [&]() {
    while (!halt.load()) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= items.size()) break;
      try {
        backend::CompletionRequest req;
        req.backend_id = config.backend.id;
        req.model_name = config.backend.model;
        req.prompt = prompts[i];
        req.temperature = config.backend.temperature;
        req.max_output_tokens = config.backend.max_output_tokens;
        const backend::Completion completion = client.complete(req);
        metrics::EvalRecord r = make_record(items[i], completion.text, config, ds, cot,
                                            spec.target_label);
        std::lock_guard<std::mutex> lock(sink_mutex);
        sink << record_line(r, items[i].text) << '\n';
        slots[i] = std::move(r);
      } catch (...) {
        failures[i] = std::current_exception();
        halt.store(true);
      }
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(config.backend.parallelism), items.size());
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (std::thread& th : threads) th.join();
  sink.close();

  std::size_t completed = 0;
  for (const auto& slot : slots) {
    if (slot) ++completed;
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!failures[i]) continue;
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - t0);
    if (completed == 0) {
      std::filesystem::remove(partial_path, ec);
      write_run_info(config.output_dir, elapsed, client.stats(), 0);
      std::rethrow_exception(failures[i]);
    }
    std::filesystem::rename(partial_path, config.output_dir / "records.jsonl", ec);
    write_run_info(config.output_dir, elapsed, client.stats(), completed);
    try {
      std::rethrow_exception(failures[i]);
    } catch (const std::exception& e) {
      throw PartialCompletion("sample " + std::to_string(items[i].index) + ": " + e.what() +
                              " (" + std::to_string(completed) + " of " +
                              std::to_string(items.size()) + " records persisted)");
    } catch (...) {
      throw PartialCompletion("sample " + std::to_string(items[i].index) +
                              ": unknown failure (" + std::to_string(completed) + " of " +
                              std::to_string(items.size()) + " records persisted)");
    }
  }
  std::filesystem::remove(partial_path, ec);

  ExperimentResult result;
  result.config = config;
  result.records.reserve(items.size());
  result.texts.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    result.records.push_back(std::move(*slots[i]));
    result.texts.push_back(items[i].text);
  }

  if (classification) {
    result.report = metrics::make_report(result.records, spec.target_label, ds.label_space.size());
  } else {
    std::vector<metrics::EvalRecord> clean, poisoned;
    for (const metrics::EvalRecord& r : result.records) {
      (r.variant == metrics::Variant::clean ? clean : poisoned).push_back(r);
    }
    if (clean.empty()) throw DataError("report needs at least one clean record");
    metrics::MetricReport report;
    report.n_clean = static_cast<int>(clean.size());
    report.n_poisoned = static_cast<int>(poisoned.size());
    report.acc = generative_utility(ds.task_kind, clean);
    if (!poisoned.empty()) {
      std::size_t hits = 0;
      for (const metrics::EvalRecord& r : poisoned) {
        if (r.attack_success) ++hits;
      }
      report.asr = static_cast<double>(hits) / static_cast<double>(poisoned.size());
    }
    // A free-text target has no meaningful chance rate.
    report.baseline_asr = 0.0;
    if (ds.task_kind == corpus::TaskKind::math) {
      for (const metrics::EvalRecord& r : result.records) {
        if (!r.parsed_label) ++report.parse_failures;
      }
    }
    result.report = report;
  }

  if (config.defense.kind == DefenseKind::onion) {
    std::vector<std::string> training;
    for (const EvalItem& item : items) {
      if (item.variant == metrics::Variant::clean) training.push_back(item.text);
    }
    const defense::LanguageModel lm =
        defense::train_lm(training, config.defense.lm_order, config.defense.lm_smoothing);
    std::vector<defense::SuspicionProfile> profiles;
    std::vector<std::size_t> scanned;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (text::split_ws(items[i].text).size() < 2) continue;  // nothing to leave out
      profiles.push_back(defense::onion_scan(lm, items[i].text));
      scanned.push_back(i);
    }
    const std::vector<bool> scan_flags = defense::onion_flag(
        profiles, config.defense.top_fraction,
        config.defense.per_sentence ? defense::FlagScope::per_sentence
                                    : defense::FlagScope::corpus);
    std::vector<bool> flags(items.size(), false);
    for (std::size_t s = 0; s < scanned.size(); ++s) flags[scanned[s]] = scan_flags[s];
    std::vector<bool> truth(items.size(), false);
    std::size_t n_poisoned = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      truth[i] = items[i].variant == metrics::Variant::poisoned;
      if (truth[i]) ++n_poisoned;
    }
    if (n_poisoned > 0 && n_poisoned < items.size()) {
      result.detection = metrics::detection_rates(flags, truth);
    }
  }

  if (config.defense.kind == DefenseKind::intent) {
    std::string scan_text = task_instruction.text;
    if (backdoor) {
      scan_text += "\n";
      scan_text += backdoor->text;
    }
    const std::string meta_template = config.defense.template_path
                                          ? text::read_file(*config.defense.template_path)
                                          : defense::default_meta_template();
    const defense::CompletionFn ask = [&](const std::string& meta_prompt) {
      backend::CompletionRequest req;
      req.backend_id = config.defense.backend_id;
      req.model_name = config.backend.model;
      req.prompt = promptgen::make_raw_prompt(meta_prompt);
      req.temperature = 0.0;
      req.max_output_tokens = config.backend.max_output_tokens;
      return client.complete(req).text;
    };
    result.intent =
        defense::intent_scan(ask, scan_text, config.defense.granularity, meta_template);
  }

  result.stats = client.stats();
  result.duration = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - t0);
  persist_result(result);
  return result;
}

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

namespace {

int parse_count(const std::string& raw, const std::string& what, int minimum) {
  const std::string v = text::trim(raw);
  char* end = nullptr;
  const long n = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || !end || *end != '\0') {
    throw ConfigError(what + " value '" + raw + "' must be an integer");
  }
  if (n < minimum) {
    throw ConfigError(what + " value '" + raw + "' must be >= " + std::to_string(minimum));
  }
  return static_cast<int>(n);
}

}  // namespace

std::vector<ExperimentResult> run_ablation(const ExperimentConfig& base, AblationAxis axis,
                                           const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("ablation needs at least one value");
  const std::filesystem::path root = base.output_dir / to_string(axis);
  std::vector<ExperimentResult> results;
  results.reserve(values.size());

  for (const std::string& raw : values) {
    const std::string value = text::trim(raw);
    if (value.empty()) throw ConfigError("ablation values must be nonempty");
    ExperimentConfig cfg = base;
    switch (axis) {
      case AblationAxis::trigger_length:
        if (cfg.attack.level != trigger::AttackLevel::word) {
          throw ConfigError("the trigger_length ablation needs a word-level attack");
        }
        cfg.attack.repeat_count = parse_count(value, "trigger_length", 1);
        break;
      case AblationAxis::trigger_position:
        if (cfg.attack.level != trigger::AttackLevel::word) {
          throw ConfigError("the trigger_position ablation needs a word-level attack");
        }
        cfg.attack.position = trigger::trigger_position_from_string(value);
        break;
      case AblationAxis::instruction_position:
        cfg.instruction_position = promptgen::instruction_position_from_string(value);
        break;
      case AblationAxis::clean_count:
        cfg.k = parse_count(value, "clean_count", 0);
        cfg.poisoned_demo_count = 0;
        break;
      case AblationAxis::poisoned_count:
        cfg.poisoned_demo_count = parse_count(value, "poisoned_count", 0);
        break;
    }
    cfg.output_dir = root / value;
    cfg.validate();
    results.push_back(run_experiment(cfg));
  }

  std::string series = "axis,value";
  for (const std::string& col : report_columns()) series += "," + col;
  series += '\n';
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::vector<std::string> cells = {to_string(axis), text::trim(values[i])};
    for (std::string& cell : report_cells(results[i])) cells.push_back(std::move(cell));
    series += csv_row(cells);
  }
  text::write_file_atomic(root / "series.csv", series);
  return results;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::filesystem::path write_report(const std::vector<ExperimentResult>& results,
                                   ReportFormat format, const std::filesystem::path& path) {
  if (results.empty()) throw ConfigError("write_report needs at least one result");
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) {
      throw DataError("cannot create report directory '" + path.parent_path().string() +
                      "': " + ec.message());
    }
  }

  std::string out;
  if (format == ReportFormat::csv) {
    out += csv_row(report_columns());
    for (const ExperimentResult& res : results) out += csv_row(report_cells(res));
  } else {
    out += markdown_row(report_columns());
    std::vector<std::string> rule(report_columns().size(), "---");
    out += markdown_row(rule);
    for (const ExperimentResult& res : results) out += markdown_row(report_cells(res));
  }
  text::write_file_atomic(path, out);
  return path;
}

ExperimentResult load_result(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed result file: " + e.what());
  }
  if (!j.is_object() || !j.contains("config") || !j.contains("report")) {
    throw DataError(path.string() + ": result file needs 'config' and 'report' objects");
  }

  ExperimentResult res;
  res.config = parse_config_text(j.at("config").dump());
  const json& rep = j.at("report");
  res.report.acc = rep.value("acc", 0.0);
  if (rep.contains("asr") && !rep.at("asr").is_null()) {
    res.report.asr = rep.at("asr").get<double>();
  }
  res.report.baseline_asr = rep.value("baseline_asr", 0.0);
  res.report.n_clean = rep.value("n_clean", 0);
  res.report.n_poisoned = rep.value("n_poisoned", 0);
  res.report.parse_failures = rep.value("parse_failures", 0);
  if (const json* d = find(j, "detection")) {
    res.detection = metrics::DetectionRates{d->value("dsr", 0.0), d->value("far", 0.0)};
  }
  if (const json* v = find(j, "intent")) {
    defense::IntentVerdict verdict;
    verdict.flagged = v->value("flagged", false);
    verdict.granularity = defense::granularity_from_string(v->value("granularity", "prompt"));
    if (v->contains("evidence") && !v->at("evidence").is_null()) {
      verdict.evidence = v->at("evidence").get<std::string>();
    }
    res.intent = verdict;
  }
  return res;
}

}  // namespace triggerbench::runner
