#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "empeval/backends.hpp"
#include "empeval/desk.hpp"
#include "empeval/evaluation.hpp"
#include "empeval/losses.hpp"
#include "empeval/templates.hpp"
#include "empeval/windowing.hpp"

namespace empeval {

enum class MonitorSplit { test, dev };

struct TrainConfig {
  double learning_rate = 5e-6;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  LossKind loss = LossKind::cross_entropy;
  double focal_gamma = 2.0;
  double ldam_max_margin = 0.5;
  double ldam_scale = 30.0;
  WindowConfig window;
  bool use_instructions = true;
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  std::size_t grad_accumulation = 1;  // optimizer step every n batches
  double weight_decay = 0.01;
  MonitorSplit monitor = MonitorSplit::test;
  double dev_fraction = 0.1;  // share of training dialogues held out when monitor = dev
  /// When set, epoch-<n>/metrics.json (and the best parameters) are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Throws ValidationError on inconsistent settings (e.g. patience > max_epochs).
void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const LabelScheme& s);
LabelScheme label_scheme_from_json(const nlohmann::json& j);

std::string to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view s);

/// Loss and dL/dlogits for the configured loss. `class_counts` feeds LDAM.
LossResult apply_loss(const TrainConfig& cfg, std::span<const double> logits, std::size_t gold,
                      std::span<const double> ldam_margins);

struct Checkpoint {
  std::size_t epoch = 0;  // 1-based
  double metric = 0.0;
  std::optional<std::filesystem::path> params_path;
};

struct TrainingHistory {
  std::vector<double> monitored;  // macro-F1 per completed epoch
  std::vector<double> train_loss;
  std::optional<Checkpoint> best;
  bool stopped_early = false;
};

enum class StopDecision { continue_training, stop };

/// Stop iff each of the last `patience` epochs failed to exceed the best
/// value recorded before them. Throws on an empty history.
StopDecision early_stop_check(std::span<const double> history, std::size_t patience);

/// Mean of the token vectors in `span`. Throws InputError on an empty span.
std::vector<double> mean_pool_target(const EmbeddingSequence& seq, TokenSpan span);

class EncoderHeadClassifier {
 public:
  EncoderHeadClassifier(DeskEncoder encoder, LabelScheme scheme, WindowConfig window, std::uint64_t seed);

  /// Logits of the affine head over the pooled target embedding.
  std::vector<double> logits(const Dialogue& d, std::size_t utterance_index) const;
  std::size_t predict(const Dialogue& d, std::size_t utterance_index) const;

  const LabelScheme& scheme() const noexcept { return scheme_; }
  const WindowConfig& window() const noexcept { return window_; }
  DeskEncoder& encoder() noexcept { return encoder_; }
  const DeskEncoder& encoder() const noexcept { return encoder_; }
  ParamBlock& head_weight() noexcept { return weight_; }
  ParamBlock& head_bias() noexcept { return bias_; }

  /// Accumulates gradients for one encoded example given dL/dlogits.
  void backward(const EmbeddingSequence& seq, std::span<const double> dlogits);
  std::vector<double> logits(const EmbeddingSequence& seq) const;
  std::vector<ParamBlock*> parameters();

  void save(const std::filesystem::path& path) const;
  static EncoderHeadClassifier load(const std::filesystem::path& path);

 private:
  DeskEncoder encoder_;
  LabelScheme scheme_;
  WindowConfig window_;
  ParamBlock weight_;  // classes x dim
  ParamBlock bias_;    // classes x 1
};

class Seq2SeqClassifier {
 public:
  Seq2SeqClassifier(DeskSeq2Seq model, InstructionTemplate tmpl, LabelScheme scheme, VerbalizerSet verbalizers,
                    WindowConfig window, bool use_instructions);

  /// Rendered prompt, fitted to the backend budget by dropping far context.
  RenderedPrompt prompt_for(const Dialogue& d, std::size_t utterance_index) const;
  ClassScores scores(const Dialogue& d, std::size_t utterance_index) const;
  std::size_t predict(const Dialogue& d, std::size_t utterance_index) const;

  const LabelScheme& scheme() const noexcept { return scheme_; }
  const VerbalizerSet& verbalizers() const noexcept { return verbalizers_; }
  const InstructionTemplate& instruction() const noexcept { return template_; }
  bool uses_instructions() const noexcept { return use_instructions_; }
  DeskSeq2Seq& model() noexcept { return model_; }
  const DeskSeq2Seq& model() const noexcept { return model_; }

  void save(const std::filesystem::path& path) const;
  static Seq2SeqClassifier load(const std::filesystem::path& path);

 private:
  DeskSeq2Seq model_;
  InstructionTemplate template_;
  LabelScheme scheme_;
  VerbalizerSet verbalizers_;
  WindowConfig window_;
  bool use_instructions_;
};

template <typename Model>
struct TrainResult {
  Model model;
  TrainingHistory history;
};

/// Predictions of `model` on `examples`, tagged with `fold`.
std::vector<PredictionRecord> predict_examples(const EncoderHeadClassifier& model, const DatasetManifest& manifest,
                                               const std::vector<LabeledExample>& examples, std::size_t fold);
std::vector<PredictionRecord> predict_examples(const Seq2SeqClassifier& model, const DatasetManifest& manifest,
                                               const std::vector<LabeledExample>& examples, std::size_t fold);

TrainResult<EncoderHeadClassifier> train_encoder_head(const DatasetManifest& manifest, const LabelScheme& scheme,
                                                      const FoldSplit& fold, const TrainConfig& cfg,
                                                      const DeskEncoderConfig& backbone = {});

TrainResult<Seq2SeqClassifier> train_seq2seq_instruction(const DatasetManifest& manifest, const LabelScheme& scheme,
                                                         const FoldSplit& fold, const TrainConfig& cfg,
                                                         const InstructionTemplate& tmpl,
                                                         const DeskSeq2SeqConfig& backbone = {});

}  // namespace empeval
