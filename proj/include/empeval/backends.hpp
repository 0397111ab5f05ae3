#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "empeval/corpus.hpp"
#include "empeval/templates.hpp"
#include "empeval/windowing.hpp"

namespace empeval {

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return begin == end; }
};

/// Per-token vectors of one input, row-major, plus the token range of every
/// window member.
struct EmbeddingSequence {
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<std::uint32_t> token_ids;
  std::vector<TokenSpan> member_spans;
  std::size_t target_member = 0;

  std::size_t token_count() const noexcept { return token_ids.size(); }
  std::span<const double> token(std::size_t i) const { return {values.data() + i * dim, dim}; }
  const TokenSpan& target_span() const { return member_spans.at(target_member); }
};

/// Log-likelihood per class, in scheme order.
struct ClassScores {
  std::vector<double> log_likelihoods;
};

struct BackendDescriptor {
  std::string name;
  bool embeds = false;
  bool scores_sequences = false;
  bool generates = false;
  bool remote = false;
  std::size_t token_budget = 512;
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  virtual std::size_t count_tokens(std::string_view text) const = 0;
  /// One entry of `member_spans` per element of `member_texts`.
  virtual EmbeddingSequence encode(std::span<const std::string> member_texts) const = 0;
};

class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  virtual std::size_t count_tokens(std::string_view text) const = 0;
  /// Summed token log-probabilities of each candidate given the prompt.
  virtual ClassScores score(const RenderedPrompt& prompt) const = 0;
};

struct CompletionParams {
  std::string model;
  double temperature = 0.0;
  int max_tokens = 16;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  virtual std::string complete(const std::string& prompt, const CompletionParams& params) = 0;
};

/// Fits the window into the backend budget (farthest context first) and
/// encodes it. `target_member` of the result points at the target.
EmbeddingSequence encode_window(const EncoderBackend& backend, const ContextWindow& window);

/// Validates arity and finiteness of the backend's scores.
ClassScores score_verbalizers(const SequenceScorer& backend, const RenderedPrompt& prompt);

std::string complete_remote(CompletionBackend& backend, const std::string& prompt, const CompletionParams& params);

/// Argmax of the log-likelihoods; ties go to the lowest class index.
std::size_t rank_classify(const ClassScores& scores, const LabelScheme& scheme);

/// Case-insensitive match of the earliest candidate occurring in `text`
/// (punctuation ignored, whole words only). nullopt when nothing matches.
std::optional<std::size_t> parse_freeform_label(std::string_view text, std::span<const std::string> candidates);
std::optional<std::size_t> parse_freeform_label(std::string_view text, const LabelScheme& scheme);

}  // namespace empeval
