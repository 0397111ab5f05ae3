#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "empeval/corpus.hpp"

namespace empeval {

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted

  bool in_test(std::string_view dialogue_id) const;
  bool in_train(std::string_view dialogue_id) const;
};

/// Seeded shuffle of the sorted dialogue ids, then dialogue i of the
/// permutation goes to test fold i mod k. Throws ValidationError when there
/// are fewer dialogues than folds.
std::vector<FoldSplit> make_folds(std::vector<std::string> dialogue_ids, std::size_t k, std::uint64_t seed);
std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, std::size_t k = 5, std::uint64_t seed = 0);

/// Training/test examples of one task under one fold.
std::vector<LabeledExample> split_examples(const std::vector<LabeledExample>& examples, const FoldSplit& fold,
                                           bool test);

struct PredictionRecord {
  std::string dialogue_id;
  std::size_t utterance_index = 0;
  std::string task_id;
  std::size_t fold = 0;
  std::size_t predicted_class = 0;
  std::vector<double> log_likelihoods;  // empty for free-text predictions
  bool parsed = true;  // false: free text matched no class, majority class substituted
};

std::string predictions_to_csv(const std::vector<PredictionRecord>& preds);
std::vector<PredictionRecord> parse_predictions_csv(std::string_view text);

struct ConfusionCounts {
  std::size_t classes = 0;
  std::vector<std::size_t> cells;  // row = gold, column = predicted

  explicit ConfusionCounts(std::size_t n = 0) : classes(n), cells(n * n, 0) {}
  std::size_t& at(std::size_t gold, std::size_t pred) { return cells.at(gold * classes + pred); }
  std::size_t at(std::size_t gold, std::size_t pred) const { return cells.at(gold * classes + pred); }
  std::size_t total() const;
  ConfusionCounts& operator+=(const ConfusionCounts& other);
};

/// Pairs predictions with gold by (dialogue, utterance, task). The key sets
/// must match exactly; otherwise ValidationError.
ConfusionCounts confusion(const std::vector<PredictionRecord>& preds, const std::vector<LabeledExample>& gold,
                          std::size_t class_count);
ConfusionCounts confusion_from_labels(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                                      std::size_t class_count);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t support = 0;
  bool zero_denominator = false;  // some per-class value was defined as 0
};

/// Per-class P/R/F1 with 0 for zero denominators; macro values are
/// unweighted class means, macro-F1 is the mean of per-class F1.
MetricsReport metrics_from_confusion(const ConfusionCounts& c);

enum class FoldAggregation { pooled, per_fold_mean };

struct TaskReport {
  std::string task_id;
  MetricsReport metrics;
  std::size_t parse_failures = 0;
  std::size_t predictions = 0;
};

struct TaskSuiteReport {
  std::vector<TaskReport> tasks;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t parse_failures = 0;
};

/// Metrics of one task over all folds. `pooled` concatenates the folds'
/// predictions; `per_fold_mean` averages each fold's report.
TaskReport evaluate_task(const std::string& task_id, const std::vector<PredictionRecord>& preds,
                         const std::vector<LabeledExample>& gold, std::size_t class_count,
                         FoldAggregation aggregation = FoldAggregation::pooled);

/// Arithmetic mean of each metric across tasks. Throws on an empty list.
TaskSuiteReport suite_mean(std::vector<TaskReport> reports);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const TaskSuiteReport& r);
TaskSuiteReport suite_from_json(const nlohmann::json& j);

std::string to_string(FoldAggregation a);
FoldAggregation fold_aggregation_from_string(std::string_view s);

std::string folds_to_json(const std::vector<FoldSplit>& folds);
std::vector<FoldSplit> folds_from_json(std::string_view text);

}  // namespace empeval
