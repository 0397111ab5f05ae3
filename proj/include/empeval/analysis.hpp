#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "empeval/corpus.hpp"

namespace empeval {

struct GroupStats {
  std::size_t n = 0;
  std::optional<double> mean;            // undefined when n = 0
  std::optional<double> standard_error;  // sample stddev / sqrt(n); undefined when n < 2
};

GroupStats group_stats(std::span<const double> values);

struct ConditionedStats {
  std::string intent_task;
  std::string dimension_task;
  GroupStats with_intent;
  GroupStats without_intent;
};

/// Splits `ratings` by the parallel `flags` and summarizes each group.
ConditionedStats conditioned_mean_se(std::span<const double> ratings, std::span<const bool> flags,
                                     std::string intent_task = {}, std::string dimension_task = {});

struct TTestResult {
  double statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// Two-sided Welch test with Welch-Satterthwaite degrees of freedom.
/// nullopt when a group has fewer than 2 values or both variances are 0.
std::optional<TTestResult> welch_t_test(std::span<const double> a, std::span<const double> b);
/// Two-sided Student test with pooled variance.
std::optional<TTestResult> pooled_t_test(std::span<const double> a, std::span<const double> b);

struct MannWhitneyResult {
  double u = 0.0;  // statistic of the first sample
  double p_value = 1.0;
};
/// Two-sided normal approximation with tie and continuity correction.
std::optional<MannWhitneyResult> mann_whitney_u_test(std::span<const double> a, std::span<const double> b);

enum class SignificanceTest { welch, pooled, mann_whitney };
std::string to_string(SignificanceTest t);
SignificanceTest significance_test_from_string(std::string_view s);
std::optional<double> significance_p_value(SignificanceTest test, std::span<const double> a,
                                           std::span<const double> b);

enum class Mark { none, diamond, dagger, double_dagger };

struct SignificanceMark {
  std::optional<double> p_value;
  Mark mark = Mark::none;
};

/// ‡ below 0.001, † below 0.01, ◇ below 0.05.
Mark mark_for(std::optional<double> p);
std::string mark_symbol(Mark m);

/// Fraction of paired items with equal codes. Throws on length mismatch or
/// empty input.
double agreement_rate(std::span<const int> a, std::span<const int> b);

struct KappaResult {
  double kappa = 0.0;
  bool degenerate = false;  // expected agreement was 1; kappa set to 1 by convention
};
KappaResult cohens_kappa(std::span<const int> a, std::span<const int> b);

struct TaskAgreement {
  std::string task_id;
  std::size_t items = 0;
  double agreement = 0.0;
  KappaResult kappa;
};

struct AgreementReport {
  std::vector<TaskAgreement> tasks;
  double mean_agreement = 0.0;
  double mean_kappa = 0.0;
};

/// Pairs the two raters of every (utterance, task). Likert values are
/// binarized as value > threshold. An item without exactly two raters is an
/// AggregationError.
AgreementReport agreement_report(const std::vector<RaterAnnotation>& annotations, int threshold = 4);

struct TableCell {
  ConditionedStats stats;
  SignificanceMark mark;
};

struct ConditionedTable {
  std::vector<std::string> intents;
  std::vector<std::string> dimensions;
  std::vector<std::vector<TableCell>> cells;  // [intent][dimension]
  SignificanceTest test = SignificanceTest::welch;
};

/// Ratings of each perceived dimension (mean of the raters per utterance)
/// split by whether both raters marked the intent. Session satisfaction is
/// joined once per dialogue through its first intent-annotated utterance.
ConditionedTable build_conditioned_table(const std::vector<RaterAnnotation>& annotations,
                                         const std::vector<std::string>& intents,
                                         const std::vector<std::string>& dimensions,
                                         SignificanceTest test = SignificanceTest::welch);

std::string table_to_csv(const ConditionedTable& t);
/// Fixed-width grid: one row per intent, "True-mean(SE) False-mean(SE) mark"
/// per dimension.
std::string table_to_grid(const ConditionedTable& t);

}  // namespace empeval
