// Command-line front end: run one experiment, sweep an ablation axis, scan
// files with the two detection defenses, or reformat persisted results.
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "triggerbench/backend.hpp"
#include "triggerbench/defense.hpp"
#include "triggerbench/error.hpp"
#include "triggerbench/metrics.hpp"
#include "triggerbench/promptgen.hpp"
#include "triggerbench/runner.hpp"
#include "triggerbench/text.hpp"

namespace tb = triggerbench;
using nlohmann::json;

namespace {

std::string ratio(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Options overlay onto the config-file JSON, so one code path validates both.
struct ConfigCli {
  std::string config_path;
  json overlay = json::object();

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "experiment config JSON file")
        ->check(CLI::ExistingFile);
    const auto set = [this](std::initializer_list<const char*> path) {
      // Returns a setter that writes the parsed value at `path` in the overlay.
      std::vector<std::string> keys(path.begin(), path.end());
      return [this, keys](const auto& value) {
        json* node = &overlay;
        for (std::size_t i = 0; i + 1 < keys.size(); ++i) node = &(*node)[keys[i]];
        (*node)[keys.back()] = value;
      };
    };
    cmd->add_option_function<std::string>("--dataset", set({"dataset"}), "dataset JSONL file");
    cmd->add_option_function<std::string>("--output-dir", set({"output_dir"}),
                                          "artifact directory");
    cmd->add_option_function<int>("--k", set({"k"}), "demonstration example count");
    cmd->add_option_function<std::uint64_t>("--seed", set({"seed"}), "experiment seed");
    cmd->add_option_function<int>("--sample-limit", set({"sample_limit"}),
                                  "cap on evaluation samples");
    cmd->add_option_function<int>("--poisoned-demos", set({"poisoned_demo_count"}),
                                  "poisoned demonstration examples");
    cmd->add_option_function<std::string>("--instruction-position",
                                          set({"instruction_position"}),
                                          "backdoor instruction position (before|after)");
    cmd->add_option_function<std::string>("--level", set({"attack", "level"}),
                                          "attack level (word|syntax|semantic)");
    cmd->add_option_function<std::string>("--trigger-word", set({"attack", "trigger_word"}),
                                          "word-level trigger token");
    cmd->add_option_function<int>("--repeat-count", set({"attack", "repeat_count"}),
                                  "trigger word repetitions");
    cmd->add_option_function<std::string>("--trigger-position", set({"attack", "position"}),
                                          "trigger position (start|middle|end)");
    cmd->add_option_function<std::string>("--trigger-class", set({"attack", "trigger_class"}),
                                          "semantic trigger class");
    cmd->add_option_function<std::string>("--target-label", set({"attack", "target_label"}),
                                          "label the attack forces");
    cmd->add_flag_function(
        "--no-instruction",
        [this](std::int64_t) { overlay["attack"]["include_instruction"] = false; },
        "drop the backdoor instruction (poisoned demonstrations only)");
    cmd->add_option_function<std::string>("--task", set({"task", "name"}), "task name");
    cmd->add_option_function<std::string>("--defense", set({"defense", "kind"}),
                                          "defense (none|ignore_instruction|onion|intent)");
    cmd->add_option_function<std::string>("--backend", set({"backend", "id"}),
                                          "backend id (oracle|http)");
    cmd->add_option_function<std::string>("--model", set({"backend", "model"}), "model name");
    cmd->add_option_function<std::string>("--base-url", set({"backend", "base_url"}),
                                          "chat-completions endpoint base URL");
    cmd->add_option_function<std::string>("--api-key-env", set({"backend", "api_key_env"}),
                                          "environment variable holding the API key");
    cmd->add_option_function<std::string>("--cache-dir", set({"backend", "cache_dir"}),
                                          "completion cache directory");
    cmd->add_option_function<int>("--parallelism", set({"backend", "parallelism"}),
                                  "concurrent backend requests");
    cmd->add_option_function<double>("--temperature", set({"backend", "temperature"}),
                                     "sampling temperature");
    cmd->add_option_function<double>("--compliance-rate", set({"backend", "compliance_rate"}),
                                     "oracle rule-following probability");
  }

  tb::runner::ExperimentConfig resolve() const {
    json base = json::object();
    if (!config_path.empty()) {
      try {
        base = json::parse(tb::text::read_file(config_path));
      } catch (const json::exception& e) {
        throw tb::ConfigError(config_path + ": malformed config JSON: " + e.what());
      }
      if (!base.is_object()) throw tb::ConfigError(config_path + ": config root must be an object");
    }
    base.merge_patch(overlay);
    return tb::runner::parse_config_text(base.dump());
  }
};

void print_summary(const tb::runner::ExperimentResult& res) {
  std::ostringstream line;
  line << "acc=" << ratio(res.report.acc);
  if (res.report.asr) line << " asr=" << ratio(*res.report.asr);
  line << " baseline_asr=" << ratio(res.report.baseline_asr)
       << " clean=" << res.report.n_clean << " poisoned=" << res.report.n_poisoned
       << " parse_failures=" << res.report.parse_failures;
  std::cout << line.str() << "\n";
  if (res.detection) {
    std::cout << "detection: dsr=" << ratio(res.detection->dsr)
              << " far=" << ratio(res.detection->far) << "\n";
  }
  if (res.intent) {
    std::cout << "intent: " << (res.intent->flagged ? "flagged" : "clean");
    if (res.intent->evidence) std::cout << " (" << *res.intent->evidence << ")";
    std::cout << "\n";
  }
  const double hit_ratio =
      res.stats.requests
          ? static_cast<double>(res.stats.cache_hits) / static_cast<double>(res.stats.requests)
          : 0.0;
  std::cout << "requests=" << res.stats.requests << " cache_hit_ratio=" << ratio(hit_ratio)
            << " duration_ms=" << res.duration.count() << "\n"
            << "artifacts: " << res.config.output_dir.string() << "\n";
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::istringstream in(tb::text::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const std::string trimmed = tb::text::trim(line);
    if (!trimmed.empty()) lines.push_back(trimmed);
  }
  return lines;
}

int run_detect(const std::string& clean_path, const std::string& poisoned_path, int order,
               double smoothing, double top_fraction, bool per_sentence) {
  const std::vector<std::string> clean = read_lines(clean_path);
  const std::vector<std::string> poisoned = read_lines(poisoned_path);
  if (clean.empty()) throw tb::DataError(clean_path + ": no sentences");
  if (poisoned.empty()) throw tb::DataError(poisoned_path + ": no sentences");

  const tb::defense::LanguageModel lm = tb::defense::train_lm(clean, order, smoothing);
  std::vector<tb::defense::SuspicionProfile> profiles;
  std::vector<bool> truth;
  std::size_t skipped = 0;
  const auto add = [&](const std::vector<std::string>& sentences, bool is_poisoned) {
    for (const std::string& s : sentences) {
      if (tb::text::split_ws(s).size() < 2) {
        ++skipped;  // nothing to leave out
        continue;
      }
      profiles.push_back(tb::defense::onion_scan(lm, s));
      truth.push_back(is_poisoned);
    }
  };
  add(clean, false);
  add(poisoned, true);

  const std::vector<bool> flags = tb::defense::onion_flag(
      profiles, top_fraction,
      per_sentence ? tb::defense::FlagScope::per_sentence : tb::defense::FlagScope::corpus);
  const tb::metrics::DetectionRates rates = tb::metrics::detection_rates(flags, truth);
  std::cout << "scanned=" << profiles.size() << " skipped=" << skipped
            << " dsr=" << ratio(rates.dsr) << " far=" << ratio(rates.far) << "\n";
  return 0;
}

int run_scan(const std::string& input_path, const std::string& granularity,
             const std::string& template_path, const std::string& backend_id,
             const std::string& base_url, const std::string& model,
             const std::string& api_key_env) {
  if (backend_id != "rulescan" && backend_id != "http") {
    throw tb::ConfigError("scan backend must be 'rulescan' or 'http'");
  }
  tb::backend::Client client;
  client.register_backend("rulescan", std::make_unique<tb::defense::RuleScanBackend>());
  if (backend_id == "http") {
    if (base_url.empty()) throw tb::ConfigError("scanning over http needs --base-url");
    tb::backend::HttpBackendConfig hc;
    hc.base_url = base_url;
    hc.api_key_env = api_key_env;
    client.register_backend("http", std::make_unique<tb::backend::HttpBackend>(std::move(hc)));
  }
  const std::string meta_template = template_path.empty()
                                        ? tb::defense::default_meta_template()
                                        : tb::text::read_file(template_path);
  const tb::defense::CompletionFn ask = [&](const std::string& meta_prompt) {
    tb::backend::CompletionRequest req;
    req.backend_id = backend_id;
    req.model_name = model;
    req.prompt = tb::promptgen::make_raw_prompt(meta_prompt);
    return client.complete(req).text;
  };
  const tb::defense::IntentVerdict verdict =
      tb::defense::intent_scan(ask, tb::text::read_file(input_path),
                               tb::defense::granularity_from_string(granularity), meta_template);
  std::cout << (verdict.flagged ? "flagged" : "clean");
  if (verdict.evidence) std::cout << ": " << *verdict.evidence;
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-backdoor evaluation harness"};
  app.require_subcommand(1);

  ConfigCli run_cfg;
  CLI::App* run = app.add_subcommand("run", "run one experiment");
  run_cfg.attach(run);

  ConfigCli ablate_cfg;
  std::string axis;
  std::vector<std::string> values;
  CLI::App* ablate = app.add_subcommand("ablate", "sweep one config axis");
  ablate_cfg.attach(ablate);
  ablate->add_option("--axis", axis,
                     "trigger_length|trigger_position|instruction_position|clean_count|"
                     "poisoned_count")
      ->required();
  ablate->add_option("--values", values, "axis values")->required()->delimiter(',');

  std::string detect_clean, detect_poisoned;
  int detect_order = 2;
  double detect_smoothing = 1.0, detect_fraction = 0.10;
  bool detect_per_sentence = false;
  CLI::App* detect = app.add_subcommand("detect", "perplexity-scan files for trigger tokens");
  detect->add_option("--clean", detect_clean, "trigger-free sentences, one per line")
      ->required()
      ->check(CLI::ExistingFile);
  detect->add_option("--poisoned", detect_poisoned, "suspect sentences, one per line")
      ->required()
      ->check(CLI::ExistingFile);
  detect->add_option("--order", detect_order, "n-gram order");
  detect->add_option("--smoothing", detect_smoothing, "add-k smoothing constant");
  detect->add_option("--top-fraction", detect_fraction, "score quantile flagged as suspicious");
  detect->add_flag("--per-sentence", detect_per_sentence, "threshold within each sentence");

  std::string scan_input, scan_granularity = "sentence", scan_template, scan_backend = "rulescan";
  std::string scan_base_url, scan_model = "rulescan", scan_key_env = "OPENAI_API_KEY";
  CLI::App* scan = app.add_subcommand("scan", "ask an analyst model whether a prompt hides a rule");
  scan->add_option("--input", scan_input, "prompt text file")->required()->check(CLI::ExistingFile);
  scan->add_option("--granularity", scan_granularity, "prompt|sentence");
  scan->add_option("--template", scan_template, "meta-prompt template file with {text}")
      ->check(CLI::ExistingFile);
  scan->add_option("--backend", scan_backend, "rulescan|http");
  scan->add_option("--base-url", scan_base_url, "chat-completions endpoint base URL");
  scan->add_option("--model", scan_model, "analyst model name");
  scan->add_option("--api-key-env", scan_key_env, "environment variable holding the API key");

  std::vector<std::string> report_inputs;
  std::string report_format = "csv", report_output;
  CLI::App* report = app.add_subcommand("report", "reformat persisted results into a table");
  report->add_option("results", report_inputs, "result.json files")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--format", report_format, "csv|markdown");
  report->add_option("--output", report_output, "table file path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) {
      print_summary(tb::runner::run_experiment(run_cfg.resolve()));
    } else if (*ablate) {
      const tb::runner::ExperimentConfig base = ablate_cfg.resolve();
      const tb::runner::AblationAxis ax = tb::runner::ablation_axis_from_string(axis);
      const std::vector<tb::runner::ExperimentResult> results =
          tb::runner::run_ablation(base, ax, values);
      for (std::size_t i = 0; i < results.size(); ++i) {
        std::cout << tb::runner::to_string(ax) << "=" << values[i]
                  << " acc=" << ratio(results[i].report.acc);
        if (results[i].report.asr) std::cout << " asr=" << ratio(*results[i].report.asr);
        std::cout << "\n";
      }
      std::cout << "series: "
                << (base.output_dir / tb::runner::to_string(ax) / "series.csv").string() << "\n";
    } else if (*detect) {
      return run_detect(detect_clean, detect_poisoned, detect_order, detect_smoothing,
                        detect_fraction, detect_per_sentence);
    } else if (*scan) {
      return run_scan(scan_input, scan_granularity, scan_template, scan_backend, scan_base_url,
                      scan_model, scan_key_env);
    } else if (*report) {
      const tb::runner::ReportFormat fmt = tb::runner::report_format_from_string(report_format);
      std::vector<tb::runner::ExperimentResult> results;
      for (const std::string& path : report_inputs) {
        results.push_back(tb::runner::load_result(path));
      }
      if (report_output.empty()) {
        report_output = fmt == tb::runner::ReportFormat::csv ? "report.csv" : "report.md";
      }
      const std::filesystem::path written = tb::runner::write_report(results, fmt, report_output);
      std::cout << tb::text::read_file(written);
      std::cerr << "written: " << written.string() << "\n";
    }
    return 0;
  } catch (const tb::PartialCompletion& e) {
    std::cerr << "partial completion: " << e.what() << "\n";
    return 3;
  } catch (const tb::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
