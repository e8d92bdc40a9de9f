#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace triggerbench::corpus {

enum class TaskKind { classification, translation, summarization, math };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind kind);

struct Sample {
  int index = 0;
  std::string text;  // nonempty after trimming
  std::string label;  // canonical casing from the declared label space
  std::optional<std::string> semantic_label;
  std::optional<std::string> reference;

  bool operator==(const Sample&) const = default;
};

// Declared spaces for a dataset file that carries no leading header line.
struct DatasetHeader {
  std::string name;
  TaskKind task_kind = TaskKind::classification;
  std::vector<std::string> label_space;
  std::optional<std::vector<std::string>> semantic_label_space;
};

struct Dataset {
  std::string name;
  TaskKind task_kind = TaskKind::classification;
  std::vector<std::string> label_space;  // unique under case folding
  std::optional<std::vector<std::string>> semantic_label_space;
  std::vector<Sample> samples;

  // Copies everything but the samples; used when deriving subsets.
  Dataset shell() const {
    return Dataset{name, task_kind, label_space, semantic_label_space, {}};
  }
  bool has_semantic_labels() const;
};

// Returns the declared spelling of `raw` (matched case-insensitively after
// trimming), or nullopt when it is not in the space.
std::optional<std::string> canonical_label(const std::vector<std::string>& space,
                                           const std::string& raw);

// File format: one record object per line with keys text, label, optional
// semantic_label, optional reference, optional index. The first line is a
// header object declaring name, task_kind, label_space and optionally
// semantic_label_space, unless `declared` supplies those instead (a header
// line is still skipped when present). Labels are matched case-insensitively
// and stored in the declared casing. Malformed lines raise DataError with the
// line number. Freshly loaded records are indexed 0..N-1 in file order;
// explicit index fields (written for persisted subsets) are honored as-is.
Dataset load_dataset(const std::filesystem::path& path,
                     const std::optional<DatasetHeader>& declared = std::nullopt);

// Inverse of load_dataset; reloading yields field-identical samples in order.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Partitions samples on label (or semantic_label when on_semantic) equal to
// class_name. Original indices and relative order are preserved in both
// halves, so concatenating and sorting by index reproduces the input.
std::pair<Dataset, Dataset> split_by_class(const Dataset& dataset,
                                           const std::string& class_name,
                                           bool on_semantic);

}  // namespace triggerbench::corpus
