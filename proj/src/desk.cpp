#include "empeval/desk.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

namespace empeval {

// --- tokenizer ---------------------------------------------------------------

HashingTokenizer::HashingTokenizer(std::size_t buckets) : buckets_(buckets) {
  if (buckets_ == 0) throw InputError("tokenizer needs at least one bucket");
}

std::vector<std::string> HashingTokenizer::pieces(std::string_view text) const {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      word += static_cast<char>(std::tolower(c));
      continue;
    }
    flush();
    if (std::isspace(c)) continue;
    if (c == '<') {
      std::size_t j = i + 1;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
      if (j < text.size() && j > i + 1 && text[j] == '>') {
        out.push_back(to_lower_ascii(text.substr(i, j - i + 1)));
        i = j;
        continue;
      }
    }
    out.emplace_back(1, static_cast<char>(c));
  }
  flush();
  return out;
}

std::uint32_t HashingTokenizer::bucket(std::string_view piece) const {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  for (unsigned char c : piece) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return static_cast<std::uint32_t>(h % buckets_);
}

std::vector<std::uint32_t> HashingTokenizer::encode(std::string_view text) const {
  std::vector<std::uint32_t> ids;
  for (const auto& p : pieces(text)) ids.push_back(bucket(p));
  return ids;
}

// --- serialization helpers ---------------------------------------------------------------

namespace {

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("truncated model file");
  return v;
}

void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

double get_f64(std::istream& in) {
  double v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("truncated model file");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get_u64(in);
  if (n > (1u << 20)) throw Error("corrupt model file");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw Error("truncated model file");
  return s;
}

void put_block(std::ostream& out, const ParamBlock& p) {
  put_u64(out, p.rows);
  put_u64(out, p.cols);
  out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
}

void get_block(std::istream& in, ParamBlock& p) {
  const auto r = get_u64(in), c = get_u64(in);
  if (r * c > (1u << 28)) throw Error("corrupt model file");
  p = ParamBlock{};
  p.resize(r, c);
  if (!in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(double))))
    throw Error("truncated model file");
}

void expect_magic(std::istream& in, const std::string& magic) {
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
    throw Error("not a " + magic + " model file");
}

void fill_normal(ParamBlock& p, std::size_t from_row, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, scale);
  for (std::size_t i = from_row * p.cols; i < p.size(); ++i) p.value[i] = N(rng);
}

}  // namespace

// --- encoder ---------------------------------------------------------------

DeskEncoder::DeskEncoder(DeskEncoderConfig cfg) : cfg_(cfg), tokenizer_(cfg.buckets) {
  if (cfg_.dim == 0) throw InputError("encoder dimension must be positive");
  desc_.name = "desk-encoder";
  desc_.embeds = true;
  desc_.token_budget = cfg_.token_budget;
  embedding_.resize(cfg_.buckets, cfg_.dim);
  fill_normal(embedding_, 0, cfg_.init_scale, cfg_.seed);
}

std::size_t DeskEncoder::count_tokens(std::string_view text) const { return tokenizer_.pieces(text).size(); }

EmbeddingSequence DeskEncoder::encode(std::span<const std::string> member_texts) const {
  EmbeddingSequence seq;
  seq.dim = cfg_.dim;
  for (const auto& text : member_texts) {
    const auto ids = tokenizer_.encode(text);
    if (ids.empty()) throw InputError("window member has no tokens: '" + text + "'");
    seq.member_spans.push_back({seq.token_ids.size(), seq.token_ids.size() + ids.size()});
    seq.token_ids.insert(seq.token_ids.end(), ids.begin(), ids.end());
  }
  if (seq.token_ids.size() > cfg_.token_budget)
    throw InputError("input of " + std::to_string(seq.token_ids.size()) + " tokens exceeds budget " +
                     std::to_string(cfg_.token_budget));
  refresh(seq);
  return seq;
}

void DeskEncoder::refresh(EmbeddingSequence& seq) const {
  const std::size_t d = cfg_.dim, n = seq.token_ids.size();
  seq.dim = d;
  seq.values.assign(n * d, 0.0);
  if (n == 0) return;
  std::vector<double> context(d, 0.0);
  for (auto id : seq.token_ids) {
    const double* e = embedding_.row(id);
    for (std::size_t j = 0; j < d; ++j) context[j] += e[j];
  }
  for (auto& c : context) c /= static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double* e = embedding_.row(seq.token_ids[k]);
    for (std::size_t j = 0; j < d; ++j) seq.values[k * d + j] = e[j] + context[j];
  }
}

void DeskEncoder::backprop_mean(const EmbeddingSequence& seq, TokenSpan span, std::span<const double> grad) {
  const std::size_t d = cfg_.dim, n = seq.token_ids.size();
  if (span.empty() || span.end > n) throw InputError("invalid token span");
  if (grad.size() != d) throw InputError("gradient dimension mismatch");
  const double own = 1.0 / static_cast<double>(span.size());
  const double ctx = 1.0 / static_cast<double>(n);
  for (std::size_t k = span.begin; k < span.end; ++k) {
    double* g = embedding_.grad_row(seq.token_ids[k]);
    for (std::size_t j = 0; j < d; ++j) g[j] += own * grad[j];
  }
  for (auto id : seq.token_ids) {
    double* g = embedding_.grad_row(id);
    for (std::size_t j = 0; j < d; ++j) g[j] += ctx * grad[j];
  }
}

void DeskEncoder::save(std::ostream& out) const {
  out.write("EMPDENC1", 8);
  put_u64(out, cfg_.buckets);
  put_u64(out, cfg_.dim);
  put_u64(out, cfg_.token_budget);
  put_f64(out, cfg_.init_scale);
  put_u64(out, cfg_.seed);
  put_block(out, embedding_);
}

DeskEncoder DeskEncoder::load(std::istream& in) {
  expect_magic(in, "EMPDENC1");
  DeskEncoderConfig cfg;
  cfg.buckets = get_u64(in);
  cfg.dim = get_u64(in);
  cfg.token_budget = get_u64(in);
  cfg.init_scale = get_f64(in);
  cfg.seed = get_u64(in);
  DeskEncoder enc(cfg);
  get_block(in, enc.embedding_);
  if (enc.embedding_.rows != cfg.buckets || enc.embedding_.cols != cfg.dim) throw Error("corrupt encoder file");
  return enc;
}

// --- seq2seq ---------------------------------------------------------------

DeskSeq2Seq::DeskSeq2Seq(DeskSeq2SeqConfig cfg) : cfg_(cfg), tokenizer_(cfg.buckets) {
  if (cfg_.dim == 0) throw InputError("model dimension must be positive");
  desc_.name = "desk-seq2seq";
  desc_.scores_sequences = true;
  desc_.token_budget = cfg_.token_budget;
  input_.resize(cfg_.buckets, cfg_.dim);
  fill_normal(input_, 0, cfg_.init_scale, cfg_.seed);
  vocab_ = {"</s>"};
  vocab_index_["</s>"] = 0;
  output_.resize(0, 2 * cfg_.dim);
  bias_.resize(0, 1);
  previous_.resize(1, 2 * cfg_.dim);  // begin-of-sequence
  grow_vocabulary(1);
}

void DeskSeq2Seq::grow_vocabulary(std::size_t new_size) {
  const std::size_t old = output_.rows;
  output_.resize(new_size, 2 * cfg_.dim);
  bias_.resize(new_size, 1);
  previous_.resize(new_size + 1, 2 * cfg_.dim);
  // deterministic per registration so snapshots and reloads agree
  fill_normal(output_, old, cfg_.init_scale, cfg_.seed ^ (0x9e3779b97f4a7c15ull + ++init_counter_));
}

void DeskSeq2Seq::register_verbalizers(const std::vector<std::string>& verbalizers) {
  for (const auto& v : verbalizers) {
    const auto ps = tokenizer_.pieces(v);
    if (ps.empty()) throw InputError("verbalizer '" + v + "' has no tokens");
    for (const auto& p : ps)
      if (vocab_index_.emplace(p, vocab_.size()).second) vocab_.push_back(p);
  }
  if (vocab_.size() != output_.rows) grow_vocabulary(vocab_.size());
}

bool DeskSeq2Seq::is_registered(std::string_view verbalizer) const {
  const auto ps = tokenizer_.pieces(verbalizer);
  if (ps.empty()) return false;
  for (const auto& p : ps)
    if (!vocab_index_.count(p)) return false;
  return true;
}

std::size_t DeskSeq2Seq::count_tokens(std::string_view text) const { return tokenizer_.pieces(text).size(); }

PromptFeatures DeskSeq2Seq::features(const RenderedPrompt& prompt) const {
  PromptFeatures f;
  f.all_tokens = tokenizer_.encode(prompt.text);
  if (f.all_tokens.empty()) throw InputError("empty prompt");
  if (f.all_tokens.size() > cfg_.token_budget)
    throw InputError("prompt of " + std::to_string(f.all_tokens.size()) + " tokens exceeds budget " +
                     std::to_string(cfg_.token_budget));
  const auto nl = prompt.text.find_last_of('\n');
  f.question_tokens = tokenizer_.encode(nl == std::string::npos ? prompt.text : prompt.text.substr(nl + 1));
  if (f.question_tokens.empty()) f.question_tokens = f.all_tokens;
  for (const auto& c : prompt.candidates) {
    std::vector<std::size_t> ids;
    for (const auto& p : tokenizer_.pieces(c)) {
      auto it = vocab_index_.find(p);
      if (it == vocab_index_.end()) throw InputError("verbalizer '" + c + "' is not in the model vocabulary");
      ids.push_back(it->second);
    }
    if (ids.empty()) throw InputError("verbalizer '" + c + "' has no tokens");
    f.candidates.push_back(std::move(ids));
  }
  return f;
}

std::vector<double> DeskSeq2Seq::hidden(const PromptFeatures& f) const {
  const std::size_t d = cfg_.dim;
  std::vector<double> h(2 * d, 0.0);
  for (auto id : f.all_tokens) {
    const double* e = input_.row(id);
    for (std::size_t j = 0; j < d; ++j) h[j] += e[j];
  }
  for (auto id : f.question_tokens) {
    const double* e = input_.row(id);
    for (std::size_t j = 0; j < d; ++j) h[d + j] += e[j];
  }
  for (std::size_t j = 0; j < d; ++j) {
    h[j] /= static_cast<double>(f.all_tokens.size());
    h[d + j] /= static_cast<double>(f.question_tokens.size());
  }
  return h;
}

namespace {

// log-softmax over the output vocabulary for state s
std::vector<double> log_probs(const ParamBlock& out, const ParamBlock& bias, const std::vector<double>& s) {
  std::vector<double> z(out.rows);
  double m = -INFINITY;
  for (std::size_t v = 0; v < out.rows; ++v) {
    const double* w = out.row(v);
    double acc = bias.value[v];
    for (std::size_t j = 0; j < s.size(); ++j) acc += w[j] * s[j];
    z[v] = acc;
    m = std::max(m, acc);
  }
  double sum = 0.0;
  for (double x : z) sum += std::exp(x - m);
  const double lse = m + std::log(sum);
  for (auto& x : z) x -= lse;
  return z;
}

}  // namespace

ClassScores DeskSeq2Seq::score(const PromptFeatures& f) const {
  const auto h = hidden(f);
  ClassScores out;
  std::vector<double> s(h.size());
  for (const auto& cand : f.candidates) {
    double total = 0.0;
    std::size_t prev_row = 0;
    for (std::size_t step = 0; step <= cand.size(); ++step) {
      const std::size_t target = step < cand.size() ? cand[step] : 0;
      const double* p = previous_.row(prev_row);
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = h[j] + p[j];
      total += log_probs(output_, bias_, s)[target];
      prev_row = target + 1;
    }
    out.log_likelihoods.push_back(total);
  }
  return out;
}

ClassScores DeskSeq2Seq::score(const RenderedPrompt& prompt) const { return score(features(prompt)); }

void DeskSeq2Seq::backward(const PromptFeatures& f, std::span<const double> dscores) {
  if (dscores.size() != f.candidates.size()) throw InputError("gradient arity does not match candidates");
  const std::size_t d = cfg_.dim, w = 2 * d;
  const auto h = hidden(f);
  std::vector<double> dh(w, 0.0), s(w);
  for (std::size_t c = 0; c < f.candidates.size(); ++c) {
    const double g = dscores[c];
    if (g == 0.0) continue;
    const auto& cand = f.candidates[c];
    std::size_t prev_row = 0;
    for (std::size_t step = 0; step <= cand.size(); ++step) {
      const std::size_t target = step < cand.size() ? cand[step] : 0;
      const double* p = previous_.row(prev_row);
      for (std::size_t j = 0; j < w; ++j) s[j] = h[j] + p[j];
      const auto lp = log_probs(output_, bias_, s);
      // d logp[target] / d z_v = onehot - softmax
      std::vector<double> ds(w, 0.0);
      for (std::size_t v = 0; v < output_.rows; ++v) {
        const double dz = g * ((v == target ? 1.0 : 0.0) - std::exp(lp[v]));
        bias_.grad[v] += dz;
        double* gw = output_.grad_row(v);
        const double* wv = output_.row(v);
        for (std::size_t j = 0; j < w; ++j) {
          gw[j] += dz * s[j];
          ds[j] += dz * wv[j];
        }
      }
      double* gp = previous_.grad_row(prev_row);
      for (std::size_t j = 0; j < w; ++j) {
        gp[j] += ds[j];
        dh[j] += ds[j];
      }
      prev_row = target + 1;
    }
  }
  const double na = static_cast<double>(f.all_tokens.size());
  const double nq = static_cast<double>(f.question_tokens.size());
  for (auto id : f.all_tokens) {
    double* g = input_.grad_row(id);
    for (std::size_t j = 0; j < d; ++j) g[j] += dh[j] / na;
  }
  for (auto id : f.question_tokens) {
    double* g = input_.grad_row(id);
    for (std::size_t j = 0; j < d; ++j) g[j] += dh[d + j] / nq;
  }
}

void DeskSeq2Seq::save(std::ostream& out) const {
  out.write("EMPDS2S1", 8);
  put_u64(out, cfg_.buckets);
  put_u64(out, cfg_.dim);
  put_u64(out, cfg_.token_budget);
  put_f64(out, cfg_.init_scale);
  put_u64(out, cfg_.seed);
  put_u64(out, init_counter_);
  put_u64(out, vocab_.size());
  for (const auto& v : vocab_) put_string(out, v);
  put_block(out, input_);
  put_block(out, output_);
  put_block(out, bias_);
  put_block(out, previous_);
}

DeskSeq2Seq DeskSeq2Seq::load(std::istream& in) {
  expect_magic(in, "EMPDS2S1");
  DeskSeq2SeqConfig cfg;
  cfg.buckets = get_u64(in);
  cfg.dim = get_u64(in);
  cfg.token_budget = get_u64(in);
  cfg.init_scale = get_f64(in);
  cfg.seed = get_u64(in);
  DeskSeq2Seq m(cfg);
  m.init_counter_ = get_u64(in);
  const auto n = get_u64(in);
  m.vocab_.clear();
  m.vocab_index_.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    m.vocab_.push_back(get_string(in));
    m.vocab_index_[m.vocab_.back()] = i;
  }
  get_block(in, m.input_);
  get_block(in, m.output_);
  get_block(in, m.bias_);
  get_block(in, m.previous_);
  if (m.output_.rows != n || m.previous_.rows != n + 1 || m.input_.rows != cfg.buckets)
    throw Error("corrupt seq2seq model file");
  return m;
}

}  // namespace empeval
