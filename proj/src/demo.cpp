#include "triggerbench/demo.hpp"

#include <limits>
#include <random>

#include "triggerbench/error.hpp"
#include "triggerbench/text.hpp"

namespace triggerbench::demo {

namespace {

// Rejection-sampled bound keeps draws uniform and identical across platforms.
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

// First `count` positions of a seeded Fisher-Yates pass over `items`.
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> items,
                                                  std::size_t count, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + bounded(rng, items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(count);
  return items;
}

std::string render_output(const corpus::Sample& s, Policy policy) {
  if (policy == Policy::balanced) return s.label;
  if (!s.semantic_label) {
    throw DataError("cot demonstrations need semantic labels; sample " +
                    std::to_string(s.index) + " has none");
  }
  return *s.semantic_label + ", " + s.label;
}

}  // namespace

Policy policy_from_string(const std::string& s) {
  const std::string t = text::to_lower(text::trim(s));
  if (t == "balanced") return Policy::balanced;
  if (t == "cot") return Policy::cot;
  throw ConfigError("unknown demonstration policy: '" + s + "'");
}

std::string to_string(Policy policy) {
  return policy == Policy::balanced ? "balanced" : "cot";
}

Demonstration select_demonstration(const corpus::Dataset& pool, int k, std::uint64_t seed,
                                   Policy policy) {
  if (k < 0) throw ConfigError("k must be >= 0");
  if (k == 0) return {};
  if (static_cast<std::size_t>(k) > pool.samples.size()) {
    throw DataError("k=" + std::to_string(k) + " exceeds pool size " +
                    std::to_string(pool.samples.size()));
  }
  if (pool.label_space.empty()) throw DataError("pool declares no label space");

  const std::size_t C = pool.label_space.size();
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < pool.samples.size(); ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      if (text::iequals(pool.samples[i].label, pool.label_space[c])) {
        by_class[c].push_back(i);
        break;
      }
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k));

  if (C <= static_cast<std::size_t>(k)) {
    const std::size_t base = static_cast<std::size_t>(k) / C;
    const std::size_t rem = static_cast<std::size_t>(k) % C;
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t quota = base + (c < rem ? 1 : 0);
      if (quota > by_class[c].size()) {
        throw DataError("class '" + pool.label_space[c] + "' has " +
                        std::to_string(by_class[c].size()) + " samples but needs " +
                        std::to_string(quota) + " for a balanced demonstration");
      }
      for (std::size_t idx : draw_without_replacement(by_class[c], quota, rng)) {
        chosen.push_back(idx);
      }
    }
  } else {
    std::vector<std::size_t> classes(C);
    for (std::size_t c = 0; c < C; ++c) classes[c] = c;
    for (std::size_t c : draw_without_replacement(std::move(classes),
                                                  static_cast<std::size_t>(k), rng)) {
      if (by_class[c].empty()) {
        throw DataError("class '" + pool.label_space[c] + "' has no samples");
      }
      chosen.push_back(by_class[c][bounded(rng, by_class[c].size())]);
    }
  }

  Demonstration out;
  out.examples.reserve(chosen.size());
  for (std::size_t idx : chosen) {
    const corpus::Sample& s = pool.samples[idx];
    out.examples.push_back({s.text, render_output(s, policy)});
  }
  return out;
}

corpus::Dataset exclude_confusing(const corpus::Dataset& pool, const trigger::AttackSpec& spec) {
  if (spec.level != trigger::AttackLevel::semantic) {
    throw ConfigError("exclude_confusing applies to semantic-level attacks");
  }
  spec.validate();
  if (!pool.semantic_label_space) {
    throw DataError("dataset '" + pool.name + "' declares no semantic label space");
  }
  auto trigger_class = corpus::canonical_label(*pool.semantic_label_space, *spec.trigger_class);
  if (!trigger_class) {
    throw DataError("trigger class '" + *spec.trigger_class +
                    "' not in the semantic label space of dataset '" + pool.name + "'");
  }

  corpus::Dataset out = pool.shell();
  for (const corpus::Sample& s : pool.samples) {
    const bool confusing = s.semantic_label &&
                           text::iequals(*s.semantic_label, *trigger_class) &&
                           !text::iequals(s.label, spec.target_label);
    if (!confusing) out.samples.push_back(s);
  }
  return out;
}

Demonstration poison_demonstration(const Demonstration& demo, int m,
                                   const trigger::AttackSpec& spec) {
  if (m < 0 || static_cast<std::size_t>(m) > demo.examples.size()) {
    throw ConfigError("poisoned demonstration count " + std::to_string(m) +
                      " out of range for " + std::to_string(demo.examples.size()) +
                      " examples");
  }
  spec.validate();
  Demonstration out = demo;
  for (int i = 0; i < m; ++i) {
    auto& ex = out.examples[static_cast<std::size_t>(i)];
    switch (spec.level) {
      case trigger::AttackLevel::word:
        ex.text = trigger::inject_word_trigger(ex.text, spec);
        break;
      case trigger::AttackLevel::syntax:
        ex.text = trigger::paraphrase_syntax(ex.text, spec, nullptr,
                                             static_cast<std::size_t>(i));
        break;
      case trigger::AttackLevel::semantic:
        break;  // topic is the trigger; the text already carries it
    }
    ex.output = spec.target_label;
  }
  return out;
}

}  // namespace triggerbench::demo
