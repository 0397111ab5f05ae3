#pragma once

// Small in-process models that implement the backend interfaces without
// pretrained weights. They stand in for transformer backbones in tests and
// desk-scale runs; any backend implementing the same interfaces can replace
// them.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "empeval/backends.hpp"
#include "empeval/optim.hpp"

namespace empeval {

/// Lower-cased word pieces hashed into a fixed number of buckets.
/// Words are runs of ASCII alphanumerics, apostrophes and non-ASCII bytes;
/// every other visible character is its own piece; "<name>" stays whole.
class HashingTokenizer {
 public:
  explicit HashingTokenizer(std::size_t buckets = 4096);

  std::vector<std::string> pieces(std::string_view text) const;
  std::uint32_t bucket(std::string_view piece) const;
  std::vector<std::uint32_t> encode(std::string_view text) const;
  std::size_t buckets() const noexcept { return buckets_; }

 private:
  std::size_t buckets_;
};

struct DeskEncoderConfig {
  std::size_t buckets = 4096;
  std::size_t dim = 32;
  std::size_t token_budget = 512;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};

/// Token vector x_k = E[t_k] + mean_j E[t_j] over the whole input, so every
/// token sees its window.
class DeskEncoder final : public EncoderBackend {
 public:
  explicit DeskEncoder(DeskEncoderConfig cfg = {});

  const BackendDescriptor& descriptor() const override { return desc_; }
  std::size_t count_tokens(std::string_view text) const override;
  EmbeddingSequence encode(std::span<const std::string> member_texts) const override;

  std::size_t dim() const noexcept { return cfg_.dim; }
  const DeskEncoderConfig& config() const noexcept { return cfg_; }

  /// Recomputes `seq.values` from its token ids with the current weights.
  void refresh(EmbeddingSequence& seq) const;
  /// Accumulates the embedding gradient given dL/d(mean of x over `span`).
  void backprop_mean(const EmbeddingSequence& seq, TokenSpan span, std::span<const double> grad);

  std::vector<ParamBlock*> parameters() { return {&embedding_}; }
  void save(std::ostream& out) const;
  static DeskEncoder load(std::istream& in);

 private:
  DeskEncoderConfig cfg_;
  BackendDescriptor desc_;
  HashingTokenizer tokenizer_;
  ParamBlock embedding_;
};

struct DeskSeq2SeqConfig {
  std::size_t buckets = 4096;
  std::size_t dim = 32;
  std::size_t token_budget = 512;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};

/// Prompt features and candidate token ids, precomputed once per prompt.
struct PromptFeatures {
  std::vector<std::uint32_t> all_tokens;
  std::vector<std::uint32_t> question_tokens;  // final line of the prompt
  std::vector<std::vector<std::size_t>> candidates;  // output-vocabulary ids
};

/// Encoder-decoder stand-in. The encoder state is
///   h = [mean E over the prompt ; mean E over its final (question) line]
/// and the decoder is log-bilinear in h plus an embedding of the previous
/// output token. A candidate's score is the sum of its pieces' log
/// probabilities plus end-of-sequence.
class DeskSeq2Seq final : public SequenceScorer {
 public:
  explicit DeskSeq2Seq(DeskSeq2SeqConfig cfg = {});

  const BackendDescriptor& descriptor() const override { return desc_; }
  std::size_t count_tokens(std::string_view text) const override;
  ClassScores score(const RenderedPrompt& prompt) const override;

  /// Adds the pieces of each verbalizer to the output vocabulary.
  void register_verbalizers(const std::vector<std::string>& verbalizers);
  bool is_registered(std::string_view verbalizer) const;
  std::size_t vocabulary_size() const noexcept { return vocab_.size(); }

  PromptFeatures features(const RenderedPrompt& prompt) const;
  ClassScores score(const PromptFeatures& f) const;
  /// Accumulates gradients given dL/d(score) per candidate.
  void backward(const PromptFeatures& f, std::span<const double> dscores);

  std::vector<ParamBlock*> parameters() { return {&input_, &output_, &bias_, &previous_}; }
  const DeskSeq2SeqConfig& config() const noexcept { return cfg_; }
  void save(std::ostream& out) const;
  static DeskSeq2Seq load(std::istream& in);

 private:
  std::vector<double> hidden(const PromptFeatures& f) const;
  void grow_vocabulary(std::size_t new_size);

  DeskSeq2SeqConfig cfg_;
  BackendDescriptor desc_;
  HashingTokenizer tokenizer_;
  std::vector<std::string> vocab_;  // index 0 is end-of-sequence
  std::map<std::string, std::size_t, std::less<>> vocab_index_;
  ParamBlock input_;     // buckets x dim
  ParamBlock output_;    // vocab x 2*dim
  ParamBlock bias_;      // vocab x 1
  ParamBlock previous_;  // (vocab + 1) x 2*dim, row 0 is begin-of-sequence, row v+1 follows token v
  std::uint64_t init_counter_ = 0;
};

}  // namespace empeval
