#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace empeval {

struct Utterance {
  std::string dialogue_id;
  std::size_t index = 0;
  std::string role;
  std::string text;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;  // sorted by index, contiguous from 0
  std::map<std::string, std::string> metadata;
};

enum class SchemeKind { binary, ternary };

/// One classification task. Class order is fixed and doubles as the
/// tie-break order for rank classification.
struct LabelScheme {
  std::string task_id;
  std::string display_name;
  SchemeKind kind = SchemeKind::binary;
  std::vector<std::string> classes;
  std::string target_role;
  std::optional<std::string> definition_text;
  std::string domain_text;

  std::size_t class_count() const noexcept { return classes.size(); }
  /// Case-insensitive lookup of a class name.
  std::optional<std::size_t> class_index(std::string_view name) const;
};

LabelScheme make_binary_scheme(std::string task_id, std::string display_name,
                               std::string target_role, std::string domain_text);
LabelScheme make_ternary_scheme(std::string task_id, std::string display_name,
                                std::string target_role, std::string domain_text);
/// Throws ValidationError when the class list does not match the kind.
void validate_scheme(const LabelScheme& scheme);

/// A rater's answer: boolean for intents, 1-5 Likert for perceived
/// dimensions and session satisfaction.
using AnnotationValue = std::variant<bool, int>;

struct RaterAnnotation {
  std::string dialogue_id;
  std::size_t utterance_index = 0;
  std::string task_id;
  std::string rater_id;
  AnnotationValue value;
};

struct LabeledExample {
  std::string dialogue_id;
  std::size_t utterance_index = 0;
  std::string task_id;
  std::size_t gold_class = 0;
};

/// Immutable after `finalize()`; safe to share between reader threads.
struct DatasetManifest {
  std::string name;
  std::vector<Dialogue> dialogues;
  std::vector<LabelScheme> schemes;
  std::vector<LabeledExample> examples;

  /// Sorts dialogues by id and examples by (task, dialogue, index), checks
  /// every invariant and builds lookup indices.
  void finalize();

  const Dialogue& dialogue(std::string_view id) const;
  const Dialogue* find_dialogue(std::string_view id) const;
  const LabelScheme& scheme(std::string_view task_id) const;
  const LabelScheme* find_scheme(std::string_view task_id) const;
  std::vector<LabeledExample> examples_for(std::string_view task_id) const;
  std::size_t utterance_count() const;

 private:
  std::unordered_map<std::string, std::size_t> dialogue_index_;
};

// --- loaders ---------------------------------------------------------------

/// One dialogue per line:
///   {"id": str, "utterances": [{"index": int, "role": str, "text": str}], "metadata": {str: str}}
/// Empty and non-English dialogues are skipped with a warning.
DatasetManifest parse_jsonl_corpus(std::string_view text, std::string name = "jsonl");
DatasetManifest load_jsonl_corpus(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Dialogue>& dialogues);

/// Labeled-example CSV: dialogue_id, utterance_index, task_id, gold_class.
std::vector<LabeledExample> parse_labeled_examples_csv(std::string_view text);
std::string to_labeled_examples_csv(const std::vector<LabeledExample>& examples);

/// Attach schemes and gold labels to a loaded dialogue set.
DatasetManifest attach_labels(DatasetManifest dialogues, std::vector<LabelScheme> schemes,
                              std::vector<LabeledExample> examples);

/// Empathy Mental Health release: a directory with
/// emotional-reactions-reddit.csv, interpretations-reddit.csv and
/// explorations-reddit.csv (sp_id, rp_id, seeker_post, response_post, level, rationales).
DatasetManifest load_emh(const std::filesystem::path& dir);
DatasetManifest parse_emh(std::string_view emotional_reactions_csv, std::string_view interpretations_csv,
                          std::string_view explorations_csv);

/// ESConv release: ESConv.json, or a directory holding it. Strategy labels become seven one-vs-rest
/// binary tasks over supporter utterances; "Others" and unannotated
/// supporter turns are negative for every task.
DatasetManifest load_esconv(const std::filesystem::path& path);
DatasetManifest parse_esconv(std::string_view json_text);

std::vector<LabelScheme> emh_schemes();
std::vector<LabelScheme> esconv_schemes();
/// The 16 expressed intents followed by the 4 perceived dimensions.
std::vector<LabelScheme> empeval_schemes();
inline constexpr std::string_view kSatisfactionTask = "satisfaction";

bool is_likert_task(std::string_view task_id);

// --- annotations -----------------------------------------------------------

/// Annotation CSV: dialogue_id, utterance_index, task_id, rater_id, value.
std::vector<RaterAnnotation> parse_annotations_csv(std::string_view text);
std::string to_annotations_csv(const std::vector<RaterAnnotation>& annotations);

/// True iff both raters answered True.
bool aggregate_intent_annotations(std::span<const RaterAnnotation> pair);
/// True iff both Likert ratings exceed `threshold`.
bool aggregate_perceived_annotations(std::span<const RaterAnnotation> pair, int threshold = 4);

struct Disagreement {
  std::string dialogue_id;
  std::size_t utterance_index = 0;
  std::string task_id;
};

struct AnnotatedCorpus {
  DatasetManifest manifest;
  std::vector<Disagreement> disagreements;  // raters split on an intent
};

/// Groups raw annotations per (utterance, task), applies the aggregation
/// rules and emits one labeled example per group. Binary classes are
/// [Yes, No], so True maps to class 0.
AnnotatedCorpus build_annotated_corpus(DatasetManifest dialogues, const std::vector<RaterAnnotation>& annotations,
                                       std::vector<LabelScheme> schemes, int perceived_threshold = 4);

std::vector<std::size_t> compute_label_distribution(const DatasetManifest& manifest, std::string_view task_id);

}  // namespace empeval
