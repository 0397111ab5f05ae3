#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "empeval/desk.hpp"
#include "empeval/error.hpp"

using namespace empeval;

TEST(HashingTokenizer, SplitsWordsAndPunctuation) {
  HashingTokenizer tok;
  const std::vector<std::string> want = {"i", "can't", "sleep", ",", "<name>", "!"};
  EXPECT_EQ(tok.pieces("I can't   SLEEP, <name>!"), want);
  EXPECT_TRUE(tok.pieces(" \n\t").empty());
  EXPECT_EQ(tok.pieces("café").size(), 1u);
  EXPECT_EQ(tok.bucket("yes"), tok.bucket("yes"));
  for (const auto& p : tok.pieces("some words here")) EXPECT_LT(tok.bucket(p), tok.buckets());
}

TEST(DeskEncoder, SpansCoverMembersAndCountMatches) {
  DeskEncoder enc({256, 8, 512, 0.1, 3});
  const std::vector<std::string> members = {"seeker: hi there", "supporter: hello, friend", "seeker: ok"};
  const auto seq = enc.encode(members);
  ASSERT_EQ(seq.member_spans.size(), 3u);
  EXPECT_EQ(seq.member_spans[0].begin, 0u);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_EQ(seq.member_spans[i].begin, seq.member_spans[i - 1].end);
  EXPECT_EQ(seq.member_spans[2].end, seq.token_count());
  std::size_t n = 0;
  for (const auto& m : members) n += enc.count_tokens(m);
  EXPECT_EQ(n, seq.token_count());
  EXPECT_EQ(seq.values.size(), seq.token_count() * 8);
}

TEST(DeskEncoder, BackpropMatchesFiniteDifferences) {
  DeskEncoder enc({64, 4, 512, 0.3, 11});
  auto seq = enc.encode(std::vector<std::string>{"a b c", "d e a", "f"});
  const TokenSpan span = seq.member_spans[1];
  const std::vector<double> w = {0.7, -1.3, 0.4, 2.0};
  auto objective = [&]() {
    enc.refresh(seq);
    double s = 0.0;
    for (std::size_t t = span.begin; t < span.end; ++t)
      for (std::size_t k = 0; k < 4; ++k) s += w[k] * seq.token(t)[k];
    return s / static_cast<double>(span.size());
  };
  enc.parameters()[0]->zero_grad();
  enc.backprop_mean(seq, span, w);
  ParamBlock& e = *enc.parameters()[0];
  const double h = 1e-6;
  for (std::uint32_t id : seq.token_ids) {
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t i = id * 4 + k;
      const double keep = e.value[i];
      e.value[i] = keep + h;
      const double up = objective();
      e.value[i] = keep - h;
      const double down = objective();
      e.value[i] = keep;
      EXPECT_NEAR(e.grad[i], (up - down) / (2 * h), 1e-6);
    }
  }
}

TEST(DeskEncoder, SaveLoadRoundTrip) {
  DeskEncoder enc({128, 6, 100, 0.1, 5});
  std::stringstream buf;
  enc.save(buf);
  const auto back = DeskEncoder::load(buf);
  const std::vector<std::string> m = {"x: hello world"};
  EXPECT_EQ(enc.encode(m).values, back.encode(m).values);
  EXPECT_EQ(back.descriptor().token_budget, 100u);
  std::stringstream junk("not a model");
  EXPECT_THROW(DeskEncoder::load(junk), Error);
}

namespace {

RenderedPrompt prompt(std::string text, std::vector<std::string> cands) { return {std::move(text), std::move(cands)}; }

}  // namespace

TEST(DeskSeq2Seq, ScoresAreLogProbabilitiesOfWholeSequences) {
  DeskSeq2Seq m({128, 8, 512, 0.2, 1});
  m.register_verbalizers({"Yes", "No"});
  const auto s = m.score(prompt("Dialogue:\nagent: hi\nDoes the agent greet?", {"Yes", "No"}));
  ASSERT_EQ(s.log_likelihoods.size(), 2u);
  for (double v : s.log_likelihoods) EXPECT_LT(v, 0.0);
  // two one-piece candidates + EOS can't take more than all the mass
  EXPECT_LE(std::exp(s.log_likelihoods[0]) + std::exp(s.log_likelihoods[1]), 1.0 + 1e-12);
}

TEST(DeskSeq2Seq, UnregisteredVerbalizerIsRejected) {
  DeskSeq2Seq m({128, 8, 512, 0.2, 1});
  m.register_verbalizers({"Yes", "No"});
  EXPECT_TRUE(m.is_registered("Yes"));
  EXPECT_FALSE(m.is_registered("Maybe"));
  EXPECT_THROW(m.score(prompt("q?", {"Yes", "Maybe"})), InputError);
}

TEST(DeskSeq2Seq, OverBudgetPromptIsRejected) {
  DeskSeq2Seq m({128, 8, 4, 0.2, 1});
  m.register_verbalizers({"Yes", "No"});
  EXPECT_THROW(m.score(prompt("one two three four five", {"Yes", "No"})), InputError);
}

TEST(DeskSeq2Seq, CandidateOrderDoesNotChangeScores) {
  DeskSeq2Seq m({128, 8, 512, 0.2, 9});
  m.register_verbalizers({"<no>", "<weak>", "<strong>"});
  const std::string text = "Context\nseeker: I lost my job\nHow strong is it?";
  const auto a = m.score(prompt(text, {"<no>", "<weak>", "<strong>"}));
  const auto b = m.score(prompt(text, {"<strong>", "<no>", "<weak>"}));
  EXPECT_DOUBLE_EQ(a.log_likelihoods[0], b.log_likelihoods[1]);
  EXPECT_DOUBLE_EQ(a.log_likelihoods[1], b.log_likelihoods[2]);
  EXPECT_DOUBLE_EQ(a.log_likelihoods[2], b.log_likelihoods[0]);
}

TEST(DeskSeq2Seq, BackwardMatchesFiniteDifferences) {
  DeskSeq2Seq m({64, 4, 512, 0.3, 2});
  m.register_verbalizers({"no communication", "weak", "strong"});
  const auto f = m.features(prompt("ctx line\nseeker: sad\nagent: tell me more\nHow strong?",
                                   {"no communication", "weak", "strong"}));
  const std::vector<double> w = {0.5, -1.2, 0.9};
  auto objective = [&]() {
    const auto s = m.score(f);
    double v = 0.0;
    for (std::size_t c = 0; c < 3; ++c) v += w[c] * s.log_likelihoods[c];
    return v;
  };
  for (auto* p : m.parameters()) p->zero_grad();
  m.backward(f, w);
  std::mt19937 rng(4);
  const double h = 1e-6;
  for (auto* p : m.parameters()) {
    // every touched entry of small blocks, a random sample of the embedding table
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < p->size(); ++i)
      if (p->grad[i] != 0.0) idx.push_back(i);
    ASSERT_FALSE(idx.empty());
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > 40) idx.resize(40);
    for (std::size_t i : idx) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = objective();
      p->value[i] = keep - h;
      const double down = objective();
      p->value[i] = keep;
      EXPECT_NEAR(p->grad[i], (up - down) / (2 * h), 1e-5 * std::max(1.0, std::abs(p->grad[i])));
    }
  }
}

TEST(DeskSeq2Seq, SaveLoadKeepsVocabularyAndScores) {
  DeskSeq2Seq m({128, 8, 300, 0.2, 6});
  m.register_verbalizers({"Yes", "No"});
  std::stringstream buf;
  m.save(buf);
  auto back = DeskSeq2Seq::load(buf);
  EXPECT_EQ(back.vocabulary_size(), m.vocabulary_size());
  const auto p = prompt("agent: sorry about that\nDoes the agent apologize?", {"Yes", "No"});
  EXPECT_EQ(m.score(p).log_likelihoods, back.score(p).log_likelihoods);
  // growing the vocabulary afterwards stays deterministic across the copy
  m.register_verbalizers({"<weak>"});
  back.register_verbalizers({"<weak>"});
  const auto q = prompt("x\ny?", {"Yes", "<weak>"});
  EXPECT_EQ(m.score(q).log_likelihoods, back.score(q).log_likelihoods);
}
