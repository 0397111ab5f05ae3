#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "empeval/analysis.hpp"
#include "empeval/evaluation.hpp"
#include "empeval/training.hpp"

namespace empeval {

enum class ModelFamily { encoder_head, seq2seq_ift, prompt_zero, prompt_fewshot };

std::string to_string(ModelFamily f);
ModelFamily model_family_from_string(std::string_view s);
inline bool is_prompting(ModelFamily f) { return f == ModelFamily::prompt_zero || f == ModelFamily::prompt_fewshot; }

struct DatasetRef {
  std::string kind;  // emh | esconv | jsonl
  std::filesystem::path path;
  std::optional<std::filesystem::path> labels;       // jsonl: labeled-example CSV
  std::optional<std::filesystem::path> annotations;  // jsonl: raw rater annotations
  std::string schemes = "empeval";                   // jsonl: scheme catalog
  std::string templates;                             // builtin set name or directory
};

struct BackendSpec {
  std::string name;  // desk-encoder | desk-seq2seq | remote
  std::size_t dim = 32;
  std::size_t buckets = 4096;
  std::size_t token_budget = 512;
  std::optional<std::filesystem::path> model_path;  // frozen desk-seq2seq for prompting
  // remote
  std::string base_url;
  std::string endpoint = "/v1/chat/completions";
  std::string api_key_env = "EMPEVAL_API_KEY";
  std::string model;
  double temperature = 0.0;
  int max_tokens = 16;
  std::size_t requests_per_interval = 60;
  std::size_t rate_interval_ms = 60000;
  std::size_t timeout_ms = 30000;
  std::size_t max_retries = 3;
  std::size_t initial_backoff_ms = 500;
};

struct AnalysisSpec {
  std::optional<std::filesystem::path> annotations;
  SignificanceTest test = SignificanceTest::welch;
  int threshold = 4;
  std::vector<std::string> intents;     // default: the 16 expressed intents
  std::vector<std::string> dimensions;  // default: perceived dimensions + satisfaction
};

struct ReportSpec {
  std::vector<std::filesystem::path> runs;
  std::optional<std::filesystem::path> output;
};

/// One declarative run. Relative paths are resolved against the run spec file.
struct RunSpec {
  std::string run_id;
  DatasetRef dataset;
  std::vector<std::string> tasks;  // empty = every task of the dataset
  ModelFamily family = ModelFamily::encoder_head;
  BackendSpec backend;
  TrainConfig train;
  bool has_train_block = false;
  WindowConfig window;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  FoldAggregation aggregation = FoldAggregation::pooled;
  AnalysisSpec analysis;
  ReportSpec report;
  nlohmann::json raw;  // echoed into the run directory

  std::filesystem::path run_dir() const { return output_dir / run_id; }
};

RunSpec parse_run_spec(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunSpec load_run_spec(const std::filesystem::path& path);

struct CommandOptions {
  bool force = false;
  std::size_t workers = 1;
};

/// Loads the dataset named by the run spec (validated manifest).
DatasetManifest load_dataset(const RunSpec& spec);
/// Selected tasks, in scheme order.
std::vector<LabelScheme> selected_schemes(const RunSpec& spec, const DatasetManifest& m);

void cmd_prepare(const RunSpec& spec, const CommandOptions& opts);
void cmd_train(const RunSpec& spec, const CommandOptions& opts);
TaskSuiteReport cmd_evaluate(const RunSpec& spec, const CommandOptions& opts);
TaskSuiteReport cmd_prompt_eval(const RunSpec& spec, const CommandOptions& opts);
ConditionedTable cmd_analyze(const RunSpec& spec, const CommandOptions& opts);
void cmd_report(const RunSpec& spec, const CommandOptions& opts);

/// Entry point of the `empeval` tool. Exit codes: 0 ok, 1 validation, 2 runtime.
int run_cli(int argc, char** argv);

}  // namespace empeval
