#include <gtest/gtest.h>

#include "empeval/corpus.hpp"
#include "empeval/error.hpp"
#include "test_support.hpp"

using namespace empeval;
using empeval::testing::make_dialogue;

namespace {

const char* kJsonl =
    R"({"id": "b", "utterances": [{"index": 1, "role": "agent", "text": "Sure."}, {"index": 0, "role": "customer", "text": "Help?"}]})"
    "\n\n"
    R"({"id": "a", "utterances": [{"index": 0, "role": "customer", "text": "Hello"}], "metadata": {"channel": "chat", "turns": 1}})"
    "\n";

RaterAnnotation ann(std::string d, std::size_t u, std::string task, std::string rater, AnnotationValue v) {
  return {std::move(d), u, std::move(task), std::move(rater), v};
}

}  // namespace

TEST(Corpus, JsonlSortsAndIndexes) {
  const auto m = parse_jsonl_corpus(kJsonl);
  ASSERT_EQ(m.dialogues.size(), 2u);
  EXPECT_EQ(m.dialogues[0].id, "a");
  EXPECT_EQ(m.dialogue("b").utterances[0].text, "Help?");
  EXPECT_EQ(m.dialogue("a").metadata.at("turns"), "1");
  EXPECT_EQ(m.utterance_count(), 3u);
  EXPECT_EQ(m.find_dialogue("zzz"), nullptr);
}

TEST(Corpus, JsonlRoundTrip) {
  const auto m = parse_jsonl_corpus(kJsonl);
  const auto again = parse_jsonl_corpus(to_jsonl(m.dialogues));
  ASSERT_EQ(again.dialogues.size(), m.dialogues.size());
  for (std::size_t i = 0; i < m.dialogues.size(); ++i) {
    EXPECT_EQ(again.dialogues[i].id, m.dialogues[i].id);
    EXPECT_EQ(again.dialogues[i].metadata, m.dialogues[i].metadata);
    ASSERT_EQ(again.dialogues[i].utterances.size(), m.dialogues[i].utterances.size());
    for (std::size_t k = 0; k < m.dialogues[i].utterances.size(); ++k)
      EXPECT_EQ(again.dialogues[i].utterances[k].text, m.dialogues[i].utterances[k].text);
  }
}

TEST(Corpus, MalformedRecordReportsLine) {
  const std::string text = std::string(R"({"id": "a", "utterances": [{"index": 0, "role": "x", "text": "hi"}]})") +
                           "\n" + R"({"id": "b", "utterances": [{"index": 0, "role": "x"}]})" + "\n";
  try {
    parse_jsonl_corpus(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  try {
    parse_jsonl_corpus("{not json\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(Corpus, DuplicateUtteranceIndexRejected) {
  const char* text = R"({"id": "a", "utterances": [{"index": 0, "role": "x", "text": "hi"}, {"index": 0, "role": "y", "text": "yo"}]})";
  try {
    parse_jsonl_corpus(text);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate utterance index"), std::string::npos);
  }
}

TEST(Corpus, GapInIndicesRejected) {
  const char* text = R"({"id": "a", "utterances": [{"index": 0, "role": "x", "text": "hi"}, {"index": 2, "role": "y", "text": "yo"}]})";
  EXPECT_THROW(parse_jsonl_corpus(text), ValidationError);
}

TEST(Corpus, EmptyAndNonEnglishDialoguesSkipped) {
  const std::string text =
      std::string(R"({"id": "e", "utterances": []})") + "\n" +
      R"({"id": "f", "utterances": [{"index": 0, "role": "x", "text": "Bonjour"}], "metadata": {"language": "fr"}})" +
      "\n" + R"({"id": "g", "utterances": [{"index": 0, "role": "x", "text": "你好，我的订单在哪里"}]})" + "\n" +
      R"({"id": "h", "utterances": [{"index": 0, "role": "x", "text": "Where is my order?"}]})" + "\n";
  const auto m = parse_jsonl_corpus(text);
  ASSERT_EQ(m.dialogues.size(), 1u);
  EXPECT_EQ(m.dialogues[0].id, "h");
}

TEST(Corpus, SchemesAreValid) {
  for (const auto& list : {emh_schemes(), esconv_schemes(), empeval_schemes()})
    for (const auto& s : list) EXPECT_NO_THROW(validate_scheme(s)) << s.task_id;
  EXPECT_EQ(emh_schemes().size(), 3u);
  EXPECT_EQ(esconv_schemes().size(), 7u);
  EXPECT_EQ(empeval_schemes().size(), 20u);
  auto s = make_binary_scheme("t", "T", "agent", "d");
  EXPECT_EQ(s.class_index("yes"), 0u);
  EXPECT_EQ(s.class_index(" NO "), 1u);
  EXPECT_FALSE(s.class_index("maybe"));
  s.classes = {"No", "Yes"};
  EXPECT_THROW(validate_scheme(s), ValidationError);
  auto t = make_ternary_scheme("t", "T", "agent", "d");
  t.classes = {"no", "weak", "No"};
  EXPECT_THROW(validate_scheme(t), ValidationError);
}

TEST(Corpus, LabelsAttachAndValidate) {
  DatasetManifest m;
  m.dialogues = {make_dialogue("d1", {{"customer", "hi"}, {"agent", "hello"}})};
  std::vector<LabelScheme> schemes = {make_binary_scheme("clarify", "Clarify", "agent", "d")};
  const auto ok = attach_labels(m, schemes, {{"d1", 1, "clarify", 0}});
  EXPECT_EQ(compute_label_distribution(ok, "clarify"), (std::vector<std::size_t>{1, 0}));
  EXPECT_THROW(attach_labels(m, schemes, {{"d1", 5, "clarify", 0}}), ValidationError);
  EXPECT_THROW(attach_labels(m, schemes, {{"d1", 1, "clarify", 2}}), ValidationError);
  EXPECT_THROW(attach_labels(m, schemes, {{"d1", 1, "unknown", 0}}), ValidationError);
  EXPECT_THROW(attach_labels(m, schemes, {{"d1", 1, "clarify", 0}, {"d1", 1, "clarify", 1}}), ValidationError);

  const auto csv = to_labeled_examples_csv(ok.examples);
  const auto back = parse_labeled_examples_csv(csv);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].gold_class, 0u);
  EXPECT_THROW(parse_labeled_examples_csv("d1,x,clarify,0\n"), ParseError);
}

TEST(Corpus, EmhLoaderMergesTasksOnPairs) {
  const std::string header = "id,sp_id,rp_id,seeker_post,response_post,level,rationales\n";
  const std::string er = header + "0,s1,r1,\"I feel lost, honestly.\",I am so sorry you feel that way.,2,sorry\n" +
                         "1,s2,r2,My exam went badly.,What happened?,0,\n";
  const std::string in = header + "0,s1,r1,\"I feel lost, honestly.\",I am so sorry you feel that way.,1,\n" +
                         "1,s2,r2,My exam went badly.,What happened?,0,\n";
  const std::string ex = header + "0,s1,r1,\"I feel lost, honestly.\",I am so sorry you feel that way.,0,\n" +
                         "1,s2,r2,My exam went badly.,What happened?,2,\n" + "2,s2,r2,dup,dup reply,1,\n";
  const auto m = parse_emh(er, in, ex);
  ASSERT_EQ(m.dialogues.size(), 3u);
  const auto& d = m.dialogue("s1_r1");
  EXPECT_EQ(d.utterances[0].role, "seeker");
  EXPECT_EQ(d.utterances[0].text, "I feel lost, honestly.");
  EXPECT_EQ(d.utterances[1].role, "supporter");
  EXPECT_NE(m.find_dialogue("s2_r2#2"), nullptr);
  EXPECT_EQ(compute_label_distribution(m, "emotional_reactions"), (std::vector<std::size_t>{1, 0, 1}));
  EXPECT_EQ(compute_label_distribution(m, "explorations"), (std::vector<std::size_t>{1, 1, 1}));
  for (const auto& e : m.examples) EXPECT_EQ(e.utterance_index, 1u);

  EXPECT_THROW(parse_emh(header + "0,s,r,a,b,3,\n", in, ex), ValidationError);
  EXPECT_THROW(parse_emh("id,sp_id\n0,s\n", in, ex), ParseError);
}

TEST(Corpus, EsconvLoaderOneVsRest) {
  const char* json = R"([
    {"emotion_type": "anxiety", "problem_type": "job crisis", "experience_type": "Previous Experience",
     "situation": "lost my job",
     "dialog": [
       {"speaker": "seeker", "content": "I lost my job."},
       {"speaker": "supporter", "content": "How are you coping?", "annotation": {"strategy": "Question"}},
       {"speaker": "supporter", "content": "You will get through this.", "annotation": {"strategy": "Affirmation and Reassurance"}},
       {"speaker": "seeker", "content": "Thanks."},
       {"speaker": "supporter", "content": "Take care.", "annotation": {"strategy": "Others"}},
       {"speaker": "supporter", "content": "So you feel stuck.", "annotation": {"strategy": "Restatement or Paraphrasing"}}
     ]}
  ])";
  const auto m = parse_esconv(json);
  ASSERT_EQ(m.dialogues.size(), 1u);
  const auto& d = m.dialogues[0];
  EXPECT_EQ(d.id, "esconv-0");
  EXPECT_EQ(d.metadata.at("emotion_type"), "anxiety");
  EXPECT_EQ(m.examples.size(), 4u * 7u);
  EXPECT_EQ(compute_label_distribution(m, "question"), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(compute_label_distribution(m, "affirmation_and_reassurance"), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(compute_label_distribution(m, "restatement_or_paraphrase"), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(compute_label_distribution(m, "information"), (std::vector<std::size_t>{0, 4}));

  EXPECT_THROW(parse_esconv(R"([{"dialog": [{"speaker": "supporter", "content": "x", "annotation": {"strategy": "Magic"}}]}])"),
               ValidationError);
  EXPECT_THROW(parse_esconv("{}"), ParseError);
}

TEST(Corpus, AnnotationCsvRoundTrip) {
  const std::vector<RaterAnnotation> anns = {ann("d1", 1, "clarify", "r1", true),
                                             ann("d1", 1, "perceived_sympathy", "r1", 5),
                                             ann("d1", 0, "satisfaction", "r2", 3)};
  const auto back = parse_annotations_csv(to_annotations_csv(anns));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(std::get<bool>(back[0].value), true);
  EXPECT_EQ(std::get<int>(back[1].value), 5);
  EXPECT_EQ(std::get<int>(back[2].value), 3);
  EXPECT_THROW(parse_annotations_csv("d1,1,perceived_sympathy,r1,6\n"), ValidationError);
  EXPECT_THROW(parse_annotations_csv("d1,1,clarify,r1,maybe\n"), ParseError);
}

TEST(Corpus, IntentAggregationRequiresBothTrue) {
  for (bool a : {false, true})
    for (bool b : {false, true}) {
      const std::vector<RaterAnnotation> pair = {ann("d", 1, "clarify", "r1", a), ann("d", 1, "clarify", "r2", b)};
      EXPECT_EQ(aggregate_intent_annotations(pair), a && b);
    }
  const std::vector<RaterAnnotation> one = {ann("d", 1, "clarify", "r1", true)};
  EXPECT_THROW(aggregate_intent_annotations(one), AggregationError);
  const std::vector<RaterAnnotation> three(3, ann("d", 1, "clarify", "r1", true));
  EXPECT_THROW(aggregate_intent_annotations(three), AggregationError);
}

TEST(Corpus, PerceivedAggregationStrictThreshold) {
  auto agg = [](int a, int b) {
    const std::vector<RaterAnnotation> pair = {ann("d", 1, "perceived_sympathy", "r1", a),
                                               ann("d", 1, "perceived_sympathy", "r2", b)};
    return aggregate_perceived_annotations(pair);
  };
  EXPECT_TRUE(agg(5, 5));
  EXPECT_FALSE(agg(5, 4));
  EXPECT_FALSE(agg(4, 4));
  EXPECT_THROW(agg(0, 5), ValidationError);
  EXPECT_THROW(agg(5, 6), ValidationError);
}

TEST(Corpus, AnnotatedCorpusTracksDisagreements) {
  DatasetManifest m;
  m.dialogues = {make_dialogue("d1", {{"customer", "hi"}, {"agent", "hello"}}),
                 make_dialogue("d2", {{"customer", "hey"}, {"agent", "sorry about that"}})};
  const std::vector<RaterAnnotation> anns = {
      ann("d1", 1, "clarify", "r1", true),          ann("d1", 1, "clarify", "r2", false),
      ann("d2", 1, "clarify", "r1", true),          ann("d2", 1, "clarify", "r2", true),
      ann("d1", 1, "perceived_sympathy", "r1", 5), ann("d1", 1, "perceived_sympathy", "r2", 5),
      ann("d2", 1, "perceived_sympathy", "r1", 5), ann("d2", 1, "perceived_sympathy", "r2", 4),
      ann("d1", 1, "satisfaction", "r1", 4),        ann("d1", 1, "satisfaction", "r2", 4)};
  const auto schemes = std::vector<LabelScheme>{make_binary_scheme("clarify", "Clarify", "agent", "d"),
                                                make_binary_scheme("perceived_sympathy", "PS", "agent", "d")};
  const auto c = build_annotated_corpus(m, anns, schemes);
  ASSERT_EQ(c.disagreements.size(), 1u);
  EXPECT_EQ(c.disagreements[0].dialogue_id, "d1");
  const auto ex = c.manifest.examples_for("clarify");
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].gold_class, 1u);  // d1 split -> False -> "No"
  EXPECT_EQ(ex[1].gold_class, 0u);
  EXPECT_EQ(compute_label_distribution(c.manifest, "perceived_sympathy"), (std::vector<std::size_t>{1, 1}));

  auto dup = anns;
  dup.push_back(ann("d2", 1, "clarify", "r1", false));
  EXPECT_THROW(build_annotated_corpus(m, dup, schemes), ValidationError);
}
