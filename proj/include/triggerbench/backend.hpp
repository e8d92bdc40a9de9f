#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>

#include "triggerbench/promptgen.hpp"

namespace triggerbench::backend {

struct CompletionRequest {
  std::string backend_id;
  std::string model_name;
  promptgen::Prompt prompt;  // rendered text is what goes over the wire
  double temperature = 0.0;
  int max_output_tokens = 64;
};

struct Completion {
  std::string text;
  std::string backend_id;
  bool cached = false;
  std::chrono::microseconds latency{0};
};

class Backend {
 public:
  virtual ~Backend() = default;
  // Returns raw completion text; throws BackendError subclasses on failure.
  virtual std::string complete_text(const CompletionRequest& request) = 0;
};

// Hex digest of (backend_id, model_name, rendered prompt, temperature,
// max_output_tokens); the cache filename for a request.
std::string cache_key(const CompletionRequest& request);

struct ClientStats {
  std::uint64_t requests = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t backend_calls = 0;
};

// Routes requests to registered backends through a content-addressed file
// cache (one file per key, written atomically), so reruns with an intact
// cache directory never touch a backend. Thread-safe once registration is
// done; registration itself is single-threaded setup.
class Client {
 public:
  explicit Client(std::optional<std::filesystem::path> cache_dir = std::nullopt);

  void register_backend(const std::string& id, std::unique_ptr<Backend> backend);
  bool has_backend(const std::string& id) const;

  Completion complete(const CompletionRequest& request);
  ClientStats stats() const;

 private:
  std::optional<std::filesystem::path> cache_dir_;
  std::map<std::string, std::unique_ptr<Backend>> backends_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> backend_calls_{0};
};

// Scripted stand-in for a perfectly obedient model. It reads the rendered
// prompt, parses any Special Instruction into a trigger rule (word contains /
// starts with a subordinating conjunction / topic equals), and answers with
// the rule's target when the test input satisfies it, deciding per-prompt
// with probability compliance_rate (seeded, deterministic). Otherwise it
// answers truth.at(text). A test input opening with the defense marker makes
// it skip the rule and answer the truth for the original text. CoT prompts
// get "{semantic_truth}, {label}" answers.
struct OracleConfig {
  std::unordered_map<std::string, std::string> truth;  // test text -> correct output
  std::unordered_map<std::string, std::string> semantic_truth;  // test text -> topic
  double compliance_rate = 1.0;  // in [0, 1]
  std::uint64_t seed = 0;
};

class OracleBackend final : public Backend {
 public:
  explicit OracleBackend(OracleConfig config);
  std::string complete_text(const CompletionRequest& request) override;

 private:
  OracleConfig config_;
};

Completion oracle_complete(const OracleConfig& config, const promptgen::Prompt& prompt);

// Chat-completions client for OpenAI-compatible endpoints: POST
// {base_url}/chat/completions with the rendered prompt as one message, parse
// choices[0].message.content. Retries transport and rate-limit failures with
// exponential backoff; auth and malformed-response failures are immediate.
struct HttpBackendConfig {
  std::string base_url;  // e.g. "https://api.openai.com/v1"
  std::string api_key_env = "OPENAI_API_KEY";
  std::string role = "user";
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{120};
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  std::string complete_text(const CompletionRequest& request) override;

 private:
  HttpBackendConfig config_;
};

}  // namespace triggerbench::backend
