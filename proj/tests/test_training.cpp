#include <gtest/gtest.h>

#include <fstream>

#include "empeval/error.hpp"
#include "empeval/training.hpp"
#include "empeval/util.hpp"
#include "synthetic.hpp"
#include "test_support.hpp"

using namespace empeval;
using empeval::testing::keyword_corpus;
using empeval::testing::scratch_dir;

namespace {

LabelScheme apology_scheme() { return make_binary_scheme("apology", "Apology", "agent", "a customer and an agent"); }

InstructionTemplate apology_template() {
  return parse_template(
      "@task apology\n"
      "@domain a customer and an agent\n"
      "@intent by saying {utterance}, does the agent apologize?\n"
      "@options Respond with yes or no.\n"
      "@layout\n"
      "You are a crowdsourcing annotator. Now read the following dialogue between {domain}.\n"
      "{Dialogue}\n"
      "Question: {intent} {options}\n");
}

TrainConfig fast_config() {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.max_epochs = 8;
  c.patience = 3;
  c.window = {2, 1};
  c.seed = 3;
  return c;
}

}  // namespace

TEST(EarlyStop, WorkedExamples) {
  const std::vector<double> flat = {0.50, 0.60, 0.60, 0.55};
  EXPECT_EQ(early_stop_check(flat, 2), StopDecision::stop);
  EXPECT_EQ(early_stop_check(std::vector<double>{0.5, 0.6}, 2), StopDecision::continue_training);
  EXPECT_EQ(early_stop_check(std::vector<double>{0.5, 0.4, 0.45, 0.7}, 3), StopDecision::continue_training);
  EXPECT_EQ(early_stop_check(std::vector<double>{0.5, 0.4, 0.45, 0.5}, 3), StopDecision::stop);
  EXPECT_EQ(early_stop_check(std::vector<double>{0.5, 0.6, 0.61}, 1), StopDecision::continue_training);
  EXPECT_THROW(early_stop_check(std::vector<double>{}, 2), InputError);
}

TEST(TrainConfig, RejectsInconsistentSettings) {
  TrainConfig c;
  c.patience = 40;
  EXPECT_THROW(validate(c), ValidationError);
  c = TrainConfig{};
  c.max_epochs = 0;
  c.patience = 0;
  EXPECT_NO_THROW(validate(c));
  EXPECT_THROW(train_config_from_json({{"learning_rat", 0.1}}), ValidationError);
  const auto back = train_config_from_json(to_json(fast_config()));
  EXPECT_EQ(back.max_epochs, 8u);
  EXPECT_DOUBLE_EQ(back.learning_rate, 1e-2);
  EXPECT_EQ(train_config_from_json({{"loss", "focal"}}).loss, LossKind::focal);
}

TEST(MeanPool, MatchesHandComputedMean) {
  EmbeddingSequence s;
  s.dim = 2;
  s.values = {1, 2, 3, 4, 5, 6, 7, 8};
  s.token_ids = {0, 1, 2, 3};
  const auto m = mean_pool_target(s, {1, 3});
  ASSERT_EQ(m.size(), 2u);
  EXPECT_DOUBLE_EQ(m[0], 4.0);
  EXPECT_DOUBLE_EQ(m[1], 5.0);
  EXPECT_THROW(mean_pool_target(s, {2, 2}), InputError);
}

TEST(ApplyLoss, DispatchesOnLossKind) {
  TrainConfig c;
  const std::vector<double> z = {0.0, 0.0}, margins = {0.1, 0.5};
  EXPECT_NEAR(apply_loss(c, z, 0, margins).value, std::log(2.0), 1e-12);
  c.loss = LossKind::focal;
  EXPECT_NEAR(apply_loss(c, z, 0, margins).value, 0.25 * std::log(2.0), 1e-12);
  c.loss = LossKind::ldam;
  EXPECT_GT(apply_loss(c, z, 1, margins).value, apply_loss(c, z, 0, margins).value);
}

TEST(EncoderHead, ZeroEpochsLeavesInitialModel) {
  const auto scheme = apology_scheme();
  const auto m = keyword_corpus(20, 1, scheme);
  const auto folds = make_folds(m, 5, 0);
  auto cfg = fast_config();
  cfg.max_epochs = 0;
  cfg.patience = 0;
  const auto r = train_encoder_head(m, scheme, folds[0], cfg, {256, 8, 512, 0.1, 0});
  EXPECT_TRUE(r.history.monitored.empty());
  EXPECT_FALSE(r.history.best);
  const EncoderHeadClassifier fresh(DeskEncoder({256, 8, 512, 0.1, cfg.seed}), scheme, cfg.window, cfg.seed);
  const auto& d = m.dialogues.front();
  EXPECT_EQ(r.model.logits(d, 1), fresh.logits(d, 1));
}

TEST(EncoderHead, SameSeedSameModel) {
  const auto scheme = apology_scheme();
  const auto m = keyword_corpus(30, 2, scheme);
  const auto folds = make_folds(m, 5, 0);
  auto cfg = fast_config();
  cfg.max_epochs = 2;
  cfg.patience = 1;
  const auto a = train_encoder_head(m, scheme, folds[1], cfg, {256, 8, 512, 0.1, 0});
  const auto b = train_encoder_head(m, scheme, folds[1], cfg, {256, 8, 512, 0.1, 0});
  EXPECT_EQ(a.history.monitored, b.history.monitored);
  EXPECT_EQ(a.model.logits(m.dialogues[3], 1), b.model.logits(m.dialogues[3], 1));
}

TEST(EncoderHead, LearnsPlantedKeyword) {
  const auto scheme = apology_scheme();
  const auto m = keyword_corpus(200, 5, scheme);
  const auto folds = make_folds(m, 5, 0);
  const auto r = train_encoder_head(m, scheme, folds[0], fast_config(), {1024, 16, 512, 0.1, 0});
  ASSERT_TRUE(r.history.best);
  EXPECT_GE(r.history.best->metric, 0.95);
  // the returned model is the best checkpoint, not the last epoch
  const auto preds = predict_examples(r.model, m, split_examples(m.examples_for("apology"), folds[0], true), 0);
  EXPECT_NEAR(metrics_from_confusion(confusion(preds, split_examples(m.examples_for("apology"), folds[0], true), 2))
                  .macro_f1,
              r.history.best->metric, 1e-12);
  EXPECT_DOUBLE_EQ(r.history.best->metric,
                   *std::max_element(r.history.monitored.begin(), r.history.monitored.end()));
}

TEST(EncoderHead, SaveLoadRoundTrip) {
  const auto scheme = apology_scheme();
  const auto m = keyword_corpus(10, 8, scheme);
  const EncoderHeadClassifier model(DeskEncoder({128, 4, 512, 0.1, 1}), scheme, {1, 1}, 4);
  const auto dir = scratch_dir("head-roundtrip");
  model.save(dir / "m.bin");
  const auto back = EncoderHeadClassifier::load(dir / "m.bin");
  EXPECT_EQ(back.logits(m.dialogues[0], 1), model.logits(m.dialogues[0], 1));
  EXPECT_EQ(back.scheme().classes, scheme.classes);
  write_file(dir / "bad.bin", "nonsense");
  EXPECT_THROW(EncoderHeadClassifier::load(dir / "bad.bin"), Error);
}

TEST(Seq2Seq, LearnsPlantedKeywordAndWritesCheckpoints) {
  const auto scheme = apology_scheme();
  const auto m = keyword_corpus(200, 6, scheme);
  const auto folds = make_folds(m, 5, 0);
  auto cfg = fast_config();
  cfg.max_epochs = 20;
  cfg.patience = 5;
  const auto dir = scratch_dir("s2s-checkpoints");
  cfg.checkpoint_dir = dir;
  const auto r = train_seq2seq_instruction(m, scheme, folds[2], cfg, apology_template(), {1024, 16, 512, 0.1, 0});
  ASSERT_TRUE(r.history.best);
  EXPECT_GE(r.history.best->metric, 0.95);
  for (std::size_t e = 1; e <= r.history.monitored.size(); ++e)
    EXPECT_TRUE(std::filesystem::exists(dir / ("epoch-" + std::to_string(e)) / "metrics.json"));
  ASSERT_TRUE(r.history.best->params_path);
  EXPECT_TRUE(std::filesystem::exists(*r.history.best->params_path));
  EXPECT_TRUE(std::filesystem::exists(dir / "best.json"));
  const auto reloaded = Seq2SeqClassifier::load(*r.history.best->params_path);
  const auto& d = m.dialogue(folds[2].test_ids.front());
  EXPECT_EQ(reloaded.scores(d, 1).log_likelihoods, r.model.scores(d, 1).log_likelihoods);
}

TEST(Seq2Seq, InstructionFlagControlsPromptHeader) {
  const auto scheme = apology_scheme();
  const auto m = keyword_corpus(5, 1, scheme);
  const auto v = finetuning_verbalizers(scheme);
  const Seq2SeqClassifier with(DeskSeq2Seq({256, 8, 512, 0.1, 0}), apology_template(), scheme, v, {1, 1}, true);
  const Seq2SeqClassifier without(DeskSeq2Seq({256, 8, 512, 0.1, 0}), apology_template(), scheme, v, {1, 1}, false);
  const auto& d = m.dialogues[0];
  EXPECT_NE(with.prompt_for(d, 1).text.find("crowdsourcing annotator"), std::string::npos);
  EXPECT_EQ(without.prompt_for(d, 1).text.find("crowdsourcing annotator"), std::string::npos);
  EXPECT_NE(without.prompt_for(d, 1).text.find("does the agent apologize?"), std::string::npos);
}

TEST(Seq2Seq, TernaryTasksUseReservedTokens) {
  const auto scheme = make_ternary_scheme("apology", "Apology", "agent", "a customer and an agent");
  auto tmpl = apology_template();
  tmpl.options_text = "Respond with strong, weak or no communication.";
  const auto v = finetuning_verbalizers(scheme);
  EXPECT_TRUE(v.special);
  const Seq2SeqClassifier c(DeskSeq2Seq({256, 8, 512, 0.1, 0}), tmpl, scheme, v, {1, 1}, true);
  EXPECT_EQ(c.prompt_for(keyword_corpus(3, 1, scheme).dialogues[0], 1).candidates,
            (std::vector<std::string>{"<no>", "<weak>", "<strong>"}));
  for (const auto& t : v.tokens) EXPECT_TRUE(c.model().is_registered(t));
}

TEST(Seq2Seq, TemplateForAnotherTaskIsRejected) {
  auto tmpl = apology_template();
  tmpl.task_id = "other";
  const auto scheme = apology_scheme();
  EXPECT_THROW(Seq2SeqClassifier(DeskSeq2Seq(DeskSeq2SeqConfig{}), tmpl, scheme, word_verbalizers(scheme), WindowConfig{}, true), TemplateError);
}

TEST(Training, DevMonitorKeepsTestSplitUnseen) {
  const auto scheme = apology_scheme();
  const auto m = keyword_corpus(40, 9, scheme);
  const auto folds = make_folds(m, 5, 0);
  auto cfg = fast_config();
  cfg.max_epochs = 2;
  cfg.patience = 1;
  cfg.monitor = MonitorSplit::dev;
  auto a = train_encoder_head(m, scheme, folds[0], cfg, {256, 8, 512, 0.1, 0});
  // rewriting the test dialogues must not change anything seen during training
  auto m2 = m;
  for (auto& d : m2.dialogues)
    if (folds[0].in_test(d.id))
      for (auto& u : d.utterances) u.text = "apologize apologize";
  auto b = train_encoder_head(m2, scheme, folds[0], cfg, {256, 8, 512, 0.1, 0});
  EXPECT_EQ(a.history.monitored, b.history.monitored);
}
