#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "triggerbench/corpus.hpp"
#include "triggerbench/trigger.hpp"

namespace triggerbench::demo {

struct Demonstration {
  struct Example {
    std::string text;
    std::string output;
  };
  std::vector<Example> examples;
};

// balanced: outputs are the sample labels. cot: outputs render as
// "{semantic_label}, {label}" for two-step classification.
enum class Policy { balanced, cot };

Policy policy_from_string(const std::string& s);
std::string to_string(Policy policy);

// Seeded, deterministic selection of k in-context examples.
//
// When the pool has C <= k classes, each class contributes floor(k/C) or
// ceil(k/C) examples (counts spread over the label space in declared order,
// never differing by more than 1), drawn uniformly without replacement.
// When C > k, k distinct classes are drawn uniformly and contribute one
// example each. k = 0 yields an empty demonstration; k > |pool| is an error,
// as is a class that cannot fill its quota.
Demonstration select_demonstration(const corpus::Dataset& pool, int k, std::uint64_t seed,
                                   Policy policy);

// Removes exactly the samples whose semantic_label equals the trigger class
// while their task label differs from the target label. Everything else,
// including samples without a semantic label, is kept in order.
corpus::Dataset exclude_confusing(const corpus::Dataset& pool, const trigger::AttackSpec& spec);

// Poisons the first m examples in demonstration order: texts are
// trigger-transformed per the attack settings (semantic level leaves text
// untouched) and outputs are replaced with the target label.
Demonstration poison_demonstration(const Demonstration& demo, int m,
                                   const trigger::AttackSpec& spec);

}  // namespace triggerbench::demo
