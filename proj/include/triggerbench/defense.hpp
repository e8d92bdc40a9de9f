#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "triggerbench/backend.hpp"

namespace triggerbench::defense {

// Add-k n-gram language model over lowercased whitespace tokens. Sequences
// are padded with n-1 start markers and one end marker when order > 1;
// unigram models score bare tokens. vocab_size counts known event tokens
// (corpus tokens, plus the end marker for order > 1); scoring adds one
// unknown-token slot on top.
struct LanguageModel {
  int order = 2;
  double smoothing_k = 1.0;
  std::size_t vocab_size = 0;
  std::unordered_map<std::string, std::int64_t> ngram_counts;
  std::unordered_map<std::string, std::int64_t> context_counts;
};

LanguageModel train_lm(const std::vector<std::string>& corpus, int order = 2,
                       double smoothing_k = 1.0);

// Geometric-mean inverse probability of the scored events; always finite
// thanks to smoothing, including for out-of-vocabulary tokens.
double perplexity(const LanguageModel& lm, const std::string& sentence);

struct SuspicionProfile {
  std::string sentence;             // tokens joined with single spaces
  std::vector<std::string> tokens;  // original casing
  std::vector<double> scores;       // scores[i] = PPL(all) - PPL(without token i)
  double base_perplexity = 0.0;
};

// Leave-one-out perplexity drops; needs at least two tokens so removal never
// empties the sentence.
SuspicionProfile onion_scan(const LanguageModel& lm, const std::string& sentence);

enum class FlagScope { corpus, per_sentence };

// Flags profiles with any token score strictly above the (1 - top_fraction)
// quantile of token scores, pooled corpus-wide by default, or within each
// sentence under per_sentence. top_fraction 0 flags nothing; 1 flags
// everything; flags grow monotonically with top_fraction.
std::vector<bool> onion_flag(const std::vector<SuspicionProfile>& profiles,
                             double top_fraction = 0.10,
                             FlagScope scope = FlagScope::corpus);

enum class Granularity { prompt, sentence };

Granularity granularity_from_string(const std::string& s);
std::string to_string(Granularity granularity);

struct IntentVerdict {
  bool flagged = false;
  Granularity granularity = Granularity::prompt;
  std::optional<std::string> evidence;  // flagged sentence, or the analyst's answer
};

// Asks a completion function whether text hides a conditional output rule.
// prompt granularity sends the whole text in one meta-prompt; sentence
// granularity scans sentence by sentence and reports the first flagged one as
// evidence. Answers are read by their leading yes/no; an empty answer means
// unflagged with no evidence.
using CompletionFn = std::function<std::string(const std::string& meta_prompt)>;

IntentVerdict intent_scan(const CompletionFn& complete, const std::string& prompt_text,
                          Granularity granularity, const std::string& meta_template);

// Meta-prompt used when no template file is configured; "{text}" marks where
// the scanned text goes.
const std::string& default_meta_template();

// Deterministic grammar for conditional output-manipulation rules: an
// if-condition on containment or sentence start paired with a classify/output
// action, or a topic-to-label override. Used by the offline scan backend and
// as the reference oracle in tests.
bool intent_rule_matches(const std::string& sentence);

// Offline analyst backend: extracts the text after the "Text: " marker of a
// meta-prompt and answers "yes"/"no" via intent_rule_matches.
class RuleScanBackend final : public backend::Backend {
 public:
  std::string complete_text(const backend::CompletionRequest& request) override;
};

}  // namespace triggerbench::defense
