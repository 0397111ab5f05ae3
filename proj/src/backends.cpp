#include "empeval/backends.hpp"

#include <cctype>
#include <cmath>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

namespace empeval {

EmbeddingSequence encode_window(const EncoderBackend& backend, const ContextWindow& window) {
  if (!backend.descriptor().embeds) throw InputError(backend.descriptor().name + " cannot embed text");
  auto cost = [&](const ContextWindow& w) {
    std::size_t n = 0;
    for (const auto& m : w.members) n += backend.count_tokens(render_member(m));
    return n;
  };
  const ContextWindow fitted = fit_to_budget(window, cost, backend.descriptor().token_budget);
  std::vector<std::string> texts;
  texts.reserve(fitted.members.size());
  for (const auto& m : fitted.members) texts.push_back(render_member(m));
  EmbeddingSequence seq = backend.encode(texts);
  seq.target_member = fitted.target_position;
  return seq;
}

ClassScores score_verbalizers(const SequenceScorer& backend, const RenderedPrompt& prompt) {
  if (!backend.descriptor().scores_sequences)
    throw InputError(backend.descriptor().name + " cannot score sequences");
  ClassScores s = backend.score(prompt);
  if (s.log_likelihoods.size() != prompt.candidates.size())
    throw InputError("backend returned " + std::to_string(s.log_likelihoods.size()) + " scores for " +
                     std::to_string(prompt.candidates.size()) + " candidates");
  for (double v : s.log_likelihoods)
    if (!std::isfinite(v)) throw InputError("backend returned a non-finite log-likelihood");
  return s;
}

std::string complete_remote(CompletionBackend& backend, const std::string& prompt, const CompletionParams& params) {
  if (!backend.descriptor().remote || !backend.descriptor().generates)
    throw InputError(backend.descriptor().name + " is not a remote completion backend");
  return backend.complete(prompt, params);
}

std::size_t rank_classify(const ClassScores& scores, const LabelScheme& scheme) {
  const auto& ll = scores.log_likelihoods;
  if (ll.size() != scheme.class_count())
    throw InputError("score arity " + std::to_string(ll.size()) + " does not match task " + scheme.task_id);
  std::size_t best = 0;
  for (std::size_t i = 1; i < ll.size(); ++i)
    if (ll[i] > ll[best]) best = i;
  return best;
}

namespace {

// Lower-cased words; punctuation and whitespace separate, bytes >= 0x80 kept.
std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::optional<std::size_t> parse_freeform_label(std::string_view text, std::span<const std::string> candidates) {
  const auto words = words_of(text);
  std::vector<std::vector<std::string>> cand_words;
  cand_words.reserve(candidates.size());
  for (const auto& c : candidates) cand_words.push_back(words_of(c));

  for (std::size_t pos = 0; pos < words.size(); ++pos) {
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < cand_words.size(); ++c) {
      const auto& cw = cand_words[c];
      if (cw.empty() || pos + cw.size() > words.size()) continue;
      bool match = true;
      for (std::size_t k = 0; k < cw.size() && match; ++k) match = words[pos + k] == cw[k];
      // longest candidate wins when several start here
      if (match && (!best || cw.size() > cand_words[*best].size())) best = c;
    }
    if (best) return best;
  }
  return std::nullopt;
}

std::optional<std::size_t> parse_freeform_label(std::string_view text, const LabelScheme& scheme) {
  return parse_freeform_label(text, std::span<const std::string>(scheme.classes));
}

}  // namespace empeval
