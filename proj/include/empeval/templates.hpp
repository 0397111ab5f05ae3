#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "empeval/corpus.hpp"
#include "empeval/windowing.hpp"

namespace empeval {

/// Natural-language instruction for one task, split into its four schema
/// parts plus a layout that places them.
///
/// Asset file format (UTF-8):
///
///     @task emotional_reactions
///     @domain a corresponding dialogue between ...
///     @definition Definition: ...          (optional)
///     @intent by saying {utterance}, what is the extent of ...
///     @options Respond with strong, weak or no communication.
///     @layout
///     You are a crowdsourcing annotator. Now read ... {domain}, then ...
///     {definition}
///     {Dialogue}
///     Question: {intent} {options}
///
/// A field runs from its `@key` line to the next `@key` line. In the layout,
/// `{Dialogue}` must sit alone on one line; everything above it is the
/// instruction header, everything from it down is the per-instance body.
/// The line holding `{definition}` is dropped when no definition is given.
struct InstructionTemplate {
  std::string task_id;
  std::string intent_text;
  std::optional<std::string> definition_text;
  std::string domain_text;
  std::string options_text;
  std::string layout;
};

InstructionTemplate parse_template(std::string_view text);
InstructionTemplate load_template_file(const std::filesystem::path& path);
/// Every *.txt in `dir`, keyed by task id.
std::map<std::string, InstructionTemplate> load_template_dir(const std::filesystem::path& dir);
/// Directory of the shipped templates for "emh", "esconv" or "empeval".
/// `EMPEVAL_ASSET_DIR` in the environment overrides the build-time location.
std::filesystem::path builtin_template_dir(std::string_view dataset);

/// Options text must name every class of the scheme exactly once.
void validate_template(const InstructionTemplate& t, const LabelScheme& scheme);

/// Class index -> verbalizer string, in scheme order.
struct VerbalizerSet {
  std::vector<std::string> tokens;
  bool special = false;  // reserved tokens rather than natural words
};

VerbalizerSet word_verbalizers(const LabelScheme& scheme);
/// "<no>", "<weak>", "<strong>" style reserved tokens.
VerbalizerSet special_token_verbalizers(const LabelScheme& scheme);
/// Ternary schemes get reserved tokens, binary schemes keep Yes/No.
VerbalizerSet finetuning_verbalizers(const LabelScheme& scheme);

struct RenderedPrompt {
  std::string text;
  std::vector<std::string> candidates;
};

struct FewShotExemplar {
  std::string dialogue_text;
  std::string utterance;
  std::string gold_verbalizer;
};

/// Header (instruction) followed by the dialogue block and the question.
/// With `include_instruction = false` only the body is rendered.
RenderedPrompt render_instruction(const InstructionTemplate& t, const ContextWindow& w, const LabelScheme& scheme,
                                  const VerbalizerSet& verbalizers, bool include_instruction = true);

/// One uniformly drawn training example per class, in class order.
/// Throws ValidationError if a class has no training example.
std::vector<LabeledExample> select_exemplar_examples(const std::vector<LabeledExample>& train,
                                                     const LabelScheme& scheme, std::uint64_t seed);

std::vector<FewShotExemplar> select_exemplars(const DatasetManifest& manifest, const std::vector<LabeledExample>& train,
                                              const LabelScheme& scheme, const WindowConfig& window,
                                              const VerbalizerSet& verbalizers, std::uint64_t seed);

/// Instruction header, then each exemplar's body followed by its gold
/// verbalizer on its own line, then the test body with the answer left open.
RenderedPrompt render_fewshot_prompt(const InstructionTemplate& t, const std::vector<FewShotExemplar>& exemplars,
                                     const ContextWindow& w, const LabelScheme& scheme,
                                     const VerbalizerSet& verbalizers);

}  // namespace empeval
