#include <gtest/gtest.h>

#include <set>

#include "empeval/error.hpp"
#include "empeval/templates.hpp"
#include "empeval/util.hpp"
#include "test_support.hpp"

using namespace empeval;
using empeval::testing::test_path;

namespace {

std::vector<LabelScheme> schemes_for(const std::string& dataset) {
  if (dataset == "emh") return emh_schemes();
  if (dataset == "esconv") return esconv_schemes();
  return empeval_schemes();
}

const char* kMini =
    "@task clarify\n"
    "@domain a customer and an agent\n"
    "@intent by saying {utterance}, is the agent clarifying?\n"
    "@options Respond with yes or no.\n"
    "@layout\n"
    "Read the dialogue between {domain}.\n"
    "{Dialogue}\n"
    "Question: {intent} {options}\n";

}  // namespace

class GoldenTemplates : public ::testing::TestWithParam<std::string> {};

TEST_P(GoldenTemplates, RenderMatchesReferenceText) {
  const std::string dataset = GetParam();
  const auto fixtures = load_jsonl_corpus(test_path("fixtures/template_dialogues.jsonl"));
  const auto& dialogue = fixtures.dialogue(dataset);
  const std::size_t target = std::stoul(dialogue.metadata.at("target_index"));
  const auto window = build_window(dialogue, target, {3, 3});

  const auto templates = load_template_dir(builtin_template_dir(dataset));
  const auto schemes = schemes_for(dataset);
  ASSERT_EQ(templates.size(), schemes.size());
  for (const auto& scheme : schemes) {
    SCOPED_TRACE(scheme.task_id);
    const auto& t = templates.at(scheme.task_id);
    EXPECT_NO_THROW(validate_template(t, scheme));
    const auto prompt = render_instruction(t, window, scheme, word_verbalizers(scheme));
    const auto golden = read_file(test_path("golden/" + dataset + "/" + scheme.task_id + ".txt"));
    EXPECT_EQ(prompt.text, golden);
    EXPECT_EQ(prompt.candidates, scheme.classes);
  }
}

INSTANTIATE_TEST_SUITE_P(AllDatasets, GoldenTemplates, ::testing::Values("emh", "esconv", "empeval"));

TEST(Templates, ParseErrors) {
  EXPECT_THROW(parse_template("@task x\n@intent i\n@options o\n@layout\n{Dialogue}\n{intent} {options}\n"),
               TemplateError);  // no @domain
  EXPECT_THROW(parse_template(std::string(kMini) + "@bogus z\n"), TemplateError);
  const std::string no_dialogue = "@task x\n@domain d\n@intent i\n@options o\n@layout\nQ: {intent} {options}\n";
  EXPECT_THROW(parse_template(no_dialogue), TemplateError);
  const std::string question_first = "@task x\n@domain d\n@intent i\n@options o\n@layout\nQ: {intent} {options}\n{Dialogue}\n";
  EXPECT_THROW(parse_template(question_first), TemplateError);
  const std::string stray = "@task x\n@domain d\n@intent i\n@options o\n@layout\n{who}\n{Dialogue}\nQ: {intent} {options}\n";
  EXPECT_THROW(parse_template(stray), TemplateError);
}

TEST(Templates, OptionsMustNameEveryClassOnce) {
  auto t = parse_template(kMini);
  const auto scheme = make_binary_scheme("clarify", "Clarify", "agent", "d");
  EXPECT_NO_THROW(validate_template(t, scheme));
  t.options_text = "Respond with yes.";
  EXPECT_THROW(validate_template(t, scheme), TemplateError);
  t.options_text = "Respond with yes or no, not yes.";
  EXPECT_THROW(validate_template(t, scheme), TemplateError);
  t.options_text = "Respond with yes or no.";
  EXPECT_THROW(validate_template(t, make_binary_scheme("other", "O", "agent", "d")), TemplateError);
}

TEST(Templates, InstructionCanBeOmitted) {
  const auto t = parse_template(kMini);
  const auto scheme = make_binary_scheme("clarify", "Clarify", "agent", "d");
  const Dialogue d = empeval::testing::make_dialogue("d", {{"customer", "where is it"}, {"agent", "which order?"}});
  const auto w = build_window(d, 1, {});
  const auto with = render_instruction(t, w, scheme, word_verbalizers(scheme));
  const auto without = render_instruction(t, w, scheme, word_verbalizers(scheme), false);
  EXPECT_EQ(with.text, "Read the dialogue between a customer and an agent.\n" + without.text);
  EXPECT_EQ(without.text,
            "customer: where is it\nagent: which order?\nQuestion: by saying which order?, is the agent clarifying? "
            "Respond with yes or no.");
}

TEST(Templates, UtteranceTextIsNotRescanned) {
  const auto t = parse_template(kMini);
  const auto scheme = make_binary_scheme("clarify", "Clarify", "agent", "d");
  const Dialogue d = empeval::testing::make_dialogue("d", {{"agent", "literal {utterance} and {intent}"}});
  const auto p = render_instruction(t, build_window(d, 0, {}), scheme, word_verbalizers(scheme));
  EXPECT_NE(p.text.find("by saying literal {utterance} and {intent}, is"), std::string::npos);
}

TEST(Templates, VerbalizerSets) {
  const auto tern = make_ternary_scheme("emotional_reactions", "ER", "supporter", "d");
  EXPECT_EQ(finetuning_verbalizers(tern).tokens, (std::vector<std::string>{"<no>", "<weak>", "<strong>"}));
  EXPECT_TRUE(finetuning_verbalizers(tern).special);
  const auto bin = make_binary_scheme("q", "Q", "supporter", "d");
  EXPECT_EQ(finetuning_verbalizers(bin).tokens, (std::vector<std::string>{"Yes", "No"}));
}

TEST(Templates, FewShotLayout) {
  const auto t = parse_template(kMini);
  const auto scheme = make_binary_scheme("clarify", "Clarify", "agent", "d");
  DatasetManifest m;
  m.dialogues = {empeval::testing::make_dialogue("a", {{"customer", "hi"}, {"agent", "what do you mean?"}}),
                 empeval::testing::make_dialogue("b", {{"customer", "hi"}, {"agent", "hello there"}}),
                 empeval::testing::make_dialogue("c", {{"customer", "refund?"}, {"agent", "sure"}})};
  m = attach_labels(m, {scheme}, {{"a", 1, "clarify", 0}, {"b", 1, "clarify", 1}});
  const auto v = word_verbalizers(scheme);
  const auto ex = select_exemplars(m, m.examples, scheme, {}, v, 3);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].gold_verbalizer, "Yes");
  EXPECT_EQ(ex[1].gold_verbalizer, "No");
  const auto w = build_window(m.dialogue("c"), 1, {});
  const auto p = render_fewshot_prompt(t, ex, w, scheme, v);
  EXPECT_EQ(p.text,
            "Read the dialogue between a customer and an agent.\n"
            "customer: hi\nagent: what do you mean?\nQuestion: by saying what do you mean?, is the agent clarifying? "
            "Respond with yes or no.\nYes\n"
            "customer: hi\nagent: hello there\nQuestion: by saying hello there, is the agent clarifying? "
            "Respond with yes or no.\nNo\n"
            "customer: refund?\nagent: sure\nQuestion: by saying sure, is the agent clarifying? Respond with yes or no.");
  EXPECT_EQ(render_fewshot_prompt(t, {}, w, scheme, v).text, render_instruction(t, w, scheme, v).text);
}

TEST(Templates, ExemplarsNeedEveryClass) {
  const auto scheme = make_binary_scheme("clarify", "Clarify", "agent", "d");
  const std::vector<LabeledExample> only_yes = {{"a", 1, "clarify", 0}};
  EXPECT_THROW(select_exemplar_examples(only_yes, scheme, 1), ValidationError);
}

TEST(Templates, ExemplarDrawIsSeeded) {
  const auto scheme = make_binary_scheme("clarify", "Clarify", "agent", "d");
  std::vector<LabeledExample> train;
  for (std::size_t i = 0; i < 40; ++i) train.push_back({"d" + std::to_string(i), 1, "clarify", i % 2});
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = select_exemplar_examples(train, scheme, seed);
    const auto b = select_exemplar_examples(train, scheme, seed);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0].dialogue_id, b[0].dialogue_id);
    EXPECT_EQ(a[0].gold_class, 0u);
    EXPECT_EQ(a[1].gold_class, 1u);
    seen.insert(a[0].dialogue_id);
  }
  EXPECT_GT(seen.size(), 1u);
}
