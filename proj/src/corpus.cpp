#include "empeval/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <nlohmann/json.hpp>
#include <set>
#include <tuple>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

namespace empeval {

using nlohmann::json;

std::optional<std::size_t> LabelScheme::class_index(std::string_view name) const {
  const std::string key = to_lower_ascii(trim(name));
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (to_lower_ascii(classes[i]) == key) return i;
  return std::nullopt;
}

LabelScheme make_binary_scheme(std::string task_id, std::string display_name, std::string target_role,
                               std::string domain_text) {
  LabelScheme s;
  s.task_id = std::move(task_id);
  s.display_name = std::move(display_name);
  s.kind = SchemeKind::binary;
  s.classes = {"Yes", "No"};
  s.target_role = std::move(target_role);
  s.domain_text = std::move(domain_text);
  return s;
}

LabelScheme make_ternary_scheme(std::string task_id, std::string display_name, std::string target_role,
                                std::string domain_text) {
  LabelScheme s;
  s.task_id = std::move(task_id);
  s.display_name = std::move(display_name);
  s.kind = SchemeKind::ternary;
  s.classes = {"no", "weak", "strong"};
  s.target_role = std::move(target_role);
  s.domain_text = std::move(domain_text);
  return s;
}

void validate_scheme(const LabelScheme& scheme) {
  if (scheme.task_id.empty()) throw ValidationError("label scheme without task id");
  if (scheme.kind == SchemeKind::binary) {
    if (scheme.classes != std::vector<std::string>{"Yes", "No"})
      throw ValidationError("binary scheme " + scheme.task_id + " must have classes [Yes, No]");
    return;
  }
  if (scheme.classes.size() != 3) throw ValidationError("ternary scheme " + scheme.task_id + " needs 3 classes");
  std::set<std::string> distinct;
  for (const auto& c : scheme.classes) distinct.insert(to_lower_ascii(c));
  if (distinct.size() != 3) throw ValidationError("ternary scheme " + scheme.task_id + " has duplicate classes");
}

// --- manifest ----------------------------------------------------------------

void DatasetManifest::finalize() {
  std::sort(dialogues.begin(), dialogues.end(), [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });
  dialogue_index_.clear();
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    auto& d = dialogues[i];
    if (d.utterances.empty()) throw ValidationError("dialogue " + d.id + " has no utterances");
    std::sort(d.utterances.begin(), d.utterances.end(),
              [](const Utterance& a, const Utterance& b) { return a.index < b.index; });
    for (std::size_t k = 0; k < d.utterances.size(); ++k) {
      auto& u = d.utterances[k];
      if (u.index != k) {
        if (k > 0 && d.utterances[k - 1].index == u.index)
          throw ValidationError("dialogue " + d.id + " has duplicate utterance index " + std::to_string(u.index));
        throw ValidationError("dialogue " + d.id + " utterance indices are not contiguous from 0");
      }
      if (trim(u.text).empty())
        throw ValidationError("dialogue " + d.id + " utterance " + std::to_string(k) + " has empty text");
      u.dialogue_id = d.id;
    }
    if (!dialogue_index_.emplace(d.id, i).second) throw ValidationError("duplicate dialogue id " + d.id);
  }

  std::set<std::string> task_ids;
  for (const auto& s : schemes) {
    validate_scheme(s);
    if (!task_ids.insert(s.task_id).second) throw ValidationError("duplicate task " + s.task_id);
  }

  std::sort(examples.begin(), examples.end(), [](const LabeledExample& a, const LabeledExample& b) {
    return std::tie(a.task_id, a.dialogue_id, a.utterance_index) < std::tie(b.task_id, b.dialogue_id, b.utterance_index);
  });
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    const auto* sch = find_scheme(e.task_id);
    if (!sch) throw ValidationError("example references unknown task " + e.task_id);
    const auto* d = find_dialogue(e.dialogue_id);
    if (!d) throw ValidationError("example references unknown dialogue " + e.dialogue_id);
    if (e.utterance_index >= d->utterances.size())
      throw ValidationError("example references missing utterance " + std::to_string(e.utterance_index) +
                            " of dialogue " + e.dialogue_id);
    if (e.gold_class >= sch->class_count())
      throw ValidationError("gold class out of range for task " + e.task_id);
    if (i > 0 && examples[i - 1].task_id == e.task_id && examples[i - 1].dialogue_id == e.dialogue_id &&
        examples[i - 1].utterance_index == e.utterance_index)
      throw ValidationError("duplicate example for " + e.dialogue_id + "/" + std::to_string(e.utterance_index) +
                            " task " + e.task_id);
  }
}

const Dialogue* DatasetManifest::find_dialogue(std::string_view id) const {
  auto it = dialogue_index_.find(std::string(id));
  return it == dialogue_index_.end() ? nullptr : &dialogues[it->second];
}

const Dialogue& DatasetManifest::dialogue(std::string_view id) const {
  const auto* d = find_dialogue(id);
  if (!d) throw Error("unknown dialogue " + std::string(id));
  return *d;
}

const LabelScheme* DatasetManifest::find_scheme(std::string_view task_id) const {
  for (const auto& s : schemes)
    if (s.task_id == task_id) return &s;
  return nullptr;
}

const LabelScheme& DatasetManifest::scheme(std::string_view task_id) const {
  const auto* s = find_scheme(task_id);
  if (!s) throw Error("unknown task " + std::string(task_id));
  return *s;
}

std::vector<LabeledExample> DatasetManifest::examples_for(std::string_view task_id) const {
  std::vector<LabeledExample> out;
  for (const auto& e : examples)
    if (e.task_id == task_id) out.push_back(e);
  return out;
}

std::size_t DatasetManifest::utterance_count() const {
  std::size_t n = 0;
  for (const auto& d : dialogues) n += d.utterances.size();
  return n;
}

// --- JSONL corpus ---------------------------------------------------------------

namespace {

// Share of letters that are plain ASCII; multi-byte UTF-8 sequences count once.
double ascii_letter_ratio(const Dialogue& d) {
  std::size_t ascii = 0, other = 0;
  for (const auto& u : d.utterances) {
    for (unsigned char c : u.text) {
      if (std::isalpha(c)) ++ascii;
      else if (c >= 0xC0) ++other;  // UTF-8 lead byte
    }
  }
  if (ascii + other == 0) return 1.0;
  return static_cast<double>(ascii) / static_cast<double>(ascii + other);
}

bool looks_non_english(const Dialogue& d) {
  if (auto it = d.metadata.find("language"); it != d.metadata.end())
    return !starts_with_ci(it->second, "en");
  return ascii_letter_ratio(d) < 0.5;
}

std::string json_scalar_to_string(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

Dialogue parse_dialogue_record(const json& rec, std::size_t line) {
  if (!rec.is_object()) throw ParseError("record is not a JSON object", line);
  Dialogue d;
  if (!rec.contains("id")) throw ParseError("missing \"id\" field", line);
  d.id = json_scalar_to_string(rec.at("id"));
  if (!rec.contains("utterances") || !rec.at("utterances").is_array())
    throw ParseError("missing \"utterances\" array", line);
  for (const auto& u : rec.at("utterances")) {
    if (!u.is_object()) throw ParseError("utterance is not an object", line);
    for (const char* key : {"index", "role", "text"})
      if (!u.contains(key)) throw ParseError(std::string("utterance missing \"") + key + "\" field", line);
    if (!u.at("index").is_number_integer() || u.at("index").get<long long>() < 0)
      throw ParseError("utterance \"index\" must be a non-negative integer", line);
    if (!u.at("text").is_string() || !u.at("role").is_string())
      throw ParseError("utterance \"role\" and \"text\" must be strings", line);
    Utterance utt;
    utt.dialogue_id = d.id;
    utt.index = u.at("index").get<std::size_t>();
    utt.role = u.at("role").get<std::string>();
    utt.text = u.at("text").get<std::string>();
    d.utterances.push_back(std::move(utt));
  }
  if (rec.contains("metadata")) {
    const auto& m = rec.at("metadata");
    if (!m.is_object()) throw ParseError("\"metadata\" must be an object", line);
    for (const auto& [k, v] : m.items()) d.metadata[k] = json_scalar_to_string(v);
  }
  return d;
}

}  // namespace

DatasetManifest parse_jsonl_corpus(std::string_view text, std::string name) {
  DatasetManifest m;
  m.name = std::move(name);
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    Dialogue d = parse_dialogue_record(rec, line_no);
    const bool blank = std::all_of(d.utterances.begin(), d.utterances.end(),
                                   [](const Utterance& u) { return trim(u.text).empty(); });
    if (d.utterances.empty() || blank) {
      spdlog::warn("skipping empty dialogue {} (line {})", d.id, line_no);
      continue;
    }
    if (looks_non_english(d)) {
      spdlog::warn("skipping non-English dialogue {} (line {})", d.id, line_no);
      continue;
    }
    m.dialogues.push_back(std::move(d));
  }
  m.finalize();
  return m;
}

DatasetManifest load_jsonl_corpus(const std::filesystem::path& path) {
  return parse_jsonl_corpus(read_file(path), path.stem().string());
}

std::string to_jsonl(const std::vector<Dialogue>& dialogues) {
  std::string out;
  for (const auto& d : dialogues) {
    json rec;
    rec["id"] = d.id;
    rec["utterances"] = json::array();
    for (const auto& u : d.utterances) rec["utterances"].push_back({{"index", u.index}, {"role", u.role}, {"text", u.text}});
    rec["metadata"] = json::object();
    for (const auto& [k, v] : d.metadata) rec["metadata"][k] = v;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

// --- labeled examples ---------------------------------------------------------------

namespace {

std::size_t parse_index(const std::string& s, std::size_t line, const char* what) {
  const std::string t = trim(s);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw ParseError(std::string(what) + " is not a non-negative integer: '" + s + "'", line);
  return static_cast<std::size_t>(std::stoull(t));
}

bool is_header(const CsvRow& row, std::string_view first) {
  return !row.fields.empty() && to_lower_ascii(trim(row.fields[0])) == first;
}

}  // namespace

std::vector<LabeledExample> parse_labeled_examples_csv(std::string_view text) {
  std::vector<LabeledExample> out;
  for (const auto& row : parse_csv(text)) {
    if (is_header(row, "dialogue_id")) continue;
    if (row.fields.size() != 4) throw ParseError("expected 4 fields", row.line);
    out.push_back({row.fields[0], parse_index(row.fields[1], row.line, "utterance_index"), row.fields[2],
                   parse_index(row.fields[3], row.line, "gold_class")});
  }
  return out;
}

std::string to_labeled_examples_csv(const std::vector<LabeledExample>& examples) {
  std::string out = "dialogue_id,utterance_index,task_id,gold_class\n";
  for (const auto& e : examples)
    out += csv_line({e.dialogue_id, std::to_string(e.utterance_index), e.task_id, std::to_string(e.gold_class)});
  return out;
}

DatasetManifest attach_labels(DatasetManifest dialogues, std::vector<LabelScheme> schemes,
                              std::vector<LabeledExample> examples) {
  dialogues.schemes = std::move(schemes);
  dialogues.examples = std::move(examples);
  dialogues.finalize();
  return dialogues;
}

// --- scheme catalogs ---------------------------------------------------------------

std::vector<LabelScheme> emh_schemes() {
  const std::string domain = "online mental health support between a help seeker and a supporter";
  return {
      make_ternary_scheme("emotional_reactions", "Emotional Reactions", "supporter", domain),
      make_ternary_scheme("interpretations", "Interpretations", "supporter", domain),
      make_ternary_scheme("explorations", "Explorations", "supporter", domain),
  };
}

std::vector<LabelScheme> esconv_schemes() {
  const std::string domain = "peer-to-peer emotional support between a seeker and a supporter";
  return {
      make_binary_scheme("question", "Question", "supporter", domain),
      make_binary_scheme("restatement_or_paraphrase", "Restatement or Paraphrase", "supporter", domain),
      make_binary_scheme("reflection_of_feelings", "Reflection of Feelings", "supporter", domain),
      make_binary_scheme("self_disclosure", "Self-disclosure", "supporter", domain),
      make_binary_scheme("affirmation_and_reassurance", "Affirmation & Reassurance", "supporter", domain),
      make_binary_scheme("providing_suggestions", "Providing Suggestions", "supporter", domain),
      make_binary_scheme("information", "Information", "supporter", domain),
  };
}

std::vector<LabelScheme> empeval_schemes() {
  const std::string domain = "customer service dialogue between a customer and an agent";
  static const std::array<std::pair<const char*, const char*>, 20> kTasks = {{
      {"ask_contact", "Ask Contact"},
      {"ask_details", "Ask Details"},
      {"ask_confirmation", "Ask Confirmation"},
      {"aware_problem", "Aware Problem"},
      {"describe_problem", "Describe Problem"},
      {"express_sympathy", "Express Sympathy"},
      {"express_reassurance", "Express Reassurance"},
      {"express_apology", "Express Apology"},
      {"answer_question", "Answer Question"},
      {"clarify", "Clarify"},
      {"explain", "Explain"},
      {"excuse", "Excuse"},
      {"inform_action", "Inform Action"},
      {"instruct_action", "Instruct Action"},
      {"tentative_solution", "Tentative Solution"},
      {"contact_others", "Contact Others"},
      {"perceived_enthusiasm", "Perceived Enthusiasm"},
      {"perceived_helpfulness", "Perceived Helpfulness"},
      {"perceived_sympathy", "Perceived Sympathy"},
      {"perceived_understanding", "Perceived Understanding"},
  }};
  std::vector<LabelScheme> out;
  for (const auto& [id, name] : kTasks) out.push_back(make_binary_scheme(id, name, "agent", domain));
  return out;
}

bool is_likert_task(std::string_view task_id) {
  return task_id == kSatisfactionTask || task_id.rfind("perceived_", 0) == 0;
}

// --- EMH ---------------------------------------------------------------

namespace {

struct EmhRow {
  std::string key;
  std::string seeker_post;
  std::string response_post;
  std::size_t level;
};

std::vector<EmhRow> parse_emh_file(std::string_view text, const std::string& what) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw ParseError(what + ": empty file");
  const auto& header = rows.front().fields;
  auto col = [&](std::string_view name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (to_lower_ascii(trim(header[i])) == name) return i;
    throw ParseError(what + ": missing column " + std::string(name), 1);
  };
  const std::size_t sp = col("sp_id"), rp = col("rp_id"), seeker = col("seeker_post"),
                    response = col("response_post"), level = col("level");
  const std::size_t width = std::max({sp, rp, seeker, response, level}) + 1;

  std::vector<EmhRow> out;
  std::map<std::string, int> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.fields.size() < width) throw ParseError(what + ": too few fields", r.line);
    const std::size_t lvl = parse_index(r.fields[level], r.line, "level");
    if (lvl > 2) throw ValidationError(what + ": level must be 0, 1 or 2 (line " + std::to_string(r.line) + ")");
    std::string key = trim(r.fields[sp]) + "_" + trim(r.fields[rp]);
    // repeated (seeker, response) pairs stay distinct dialogues
    if (const int n = ++seen[key]; n > 1) key += "#" + std::to_string(n);
    out.push_back({std::move(key), r.fields[seeker], r.fields[response], lvl});
  }
  return out;
}

}  // namespace

DatasetManifest parse_emh(std::string_view emotional_reactions_csv, std::string_view interpretations_csv,
                          std::string_view explorations_csv) {
  DatasetManifest m;
  m.name = "emh";
  m.schemes = emh_schemes();
  const std::array<std::string_view, 3> files = {emotional_reactions_csv, interpretations_csv, explorations_csv};

  std::map<std::string, std::size_t> by_key;
  for (std::size_t t = 0; t < files.size(); ++t) {
    const auto& task = m.schemes[t].task_id;
    for (auto& row : parse_emh_file(files[t], task)) {
      auto [it, inserted] = by_key.emplace(row.key, m.dialogues.size());
      if (inserted) {
        Dialogue d;
        d.id = row.key;
        d.utterances.push_back({row.key, 0, "seeker", row.seeker_post});
        d.utterances.push_back({row.key, 1, "supporter", row.response_post});
        m.dialogues.push_back(std::move(d));
      }
      m.examples.push_back({row.key, 1, task, row.level});
    }
  }
  m.finalize();
  return m;
}

DatasetManifest load_emh(const std::filesystem::path& dir) {
  return parse_emh(read_file(dir / "emotional-reactions-reddit.csv"), read_file(dir / "interpretations-reddit.csv"),
                   read_file(dir / "explorations-reddit.csv"));
}

// --- ESConv ---------------------------------------------------------------

namespace {

std::string normalize_strategy(std::string_view s) {
  std::string out;
  for (unsigned char c : s)
    if (std::isalnum(c)) out += static_cast<char>(std::tolower(c));
  return out;
}

// Returns the task index for a strategy label, -1 for "Others".
int strategy_task(std::string_view label) {
  static const std::map<std::string, int> kMap = {
      {"question", 0},
      {"restatementorparaphrasing", 1},
      {"restatementorparaphrase", 1},
      {"reflectionoffeelings", 2},
      {"selfdisclosure", 3},
      {"affirmationandreassurance", 4},
      {"providingsuggestions", 5},
      {"information", 6},
      {"others", -1},
  };
  auto it = kMap.find(normalize_strategy(label));
  if (it == kMap.end()) throw ValidationError("unknown ESConv strategy '" + std::string(label) + "'");
  return it->second;
}

}  // namespace

DatasetManifest parse_esconv(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid ESConv JSON: ") + e.what());
  }
  if (!root.is_array()) throw ParseError("ESConv root must be an array of sessions");

  DatasetManifest m;
  m.name = "esconv";
  m.schemes = esconv_schemes();
  const int width = static_cast<int>(std::to_string(root.size()).size());

  for (std::size_t s = 0; s < root.size(); ++s) {
    const auto& session = root[s];
    if (!session.is_object() || !session.contains("dialog") || !session.at("dialog").is_array())
      throw ParseError("session " + std::to_string(s) + " has no dialog array");
    std::string id = std::to_string(s);
    id = "esconv-" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;

    Dialogue d;
    d.id = id;
    for (const char* key : {"experience_type", "emotion_type", "problem_type", "situation"})
      if (session.contains(key) && session.at(key).is_string()) d.metadata[key] = session.at(key).get<std::string>();

    const auto& turns = session.at("dialog");
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const auto& turn = turns[i];
      if (!turn.contains("speaker") || !turn.contains("content"))
        throw ParseError("session " + std::to_string(s) + " turn " + std::to_string(i) + " lacks speaker/content");
      const std::string role = turn.at("speaker").get<std::string>();
      d.utterances.push_back({id, i, role, turn.at("content").get<std::string>()});
      if (role != "supporter") continue;

      int positive = -1;
      if (turn.contains("annotation") && turn.at("annotation").is_object() &&
          turn.at("annotation").contains("strategy")) {
        positive = strategy_task(turn.at("annotation").at("strategy").get<std::string>());
      }
      for (std::size_t t = 0; t < m.schemes.size(); ++t)
        m.examples.push_back({id, i, m.schemes[t].task_id, static_cast<int>(t) == positive ? 0u : 1u});
    }
    m.dialogues.push_back(std::move(d));
  }
  m.finalize();
  return m;
}

DatasetManifest load_esconv(const std::filesystem::path& path) {
  return parse_esconv(read_file(std::filesystem::is_directory(path) ? path / "ESConv.json" : path));
}

// --- annotations ---------------------------------------------------------------

std::vector<RaterAnnotation> parse_annotations_csv(std::string_view text) {
  std::vector<RaterAnnotation> out;
  for (const auto& row : parse_csv(text)) {
    if (is_header(row, "dialogue_id")) continue;
    if (row.fields.size() != 5) throw ParseError("expected 5 fields", row.line);
    RaterAnnotation a;
    a.dialogue_id = row.fields[0];
    a.utterance_index = parse_index(row.fields[1], row.line, "utterance_index");
    a.task_id = trim(row.fields[2]);
    a.rater_id = trim(row.fields[3]);
    const std::string v = to_lower_ascii(trim(row.fields[4]));
    if (is_likert_task(a.task_id)) {
      const std::size_t n = parse_index(v, row.line, "Likert value");
      if (n < 1 || n > 5) throw ValidationError("Likert value out of range 1-5 on line " + std::to_string(row.line));
      a.value = static_cast<int>(n);
    } else if (v == "true" || v == "yes" || v == "1") {
      a.value = true;
    } else if (v == "false" || v == "no" || v == "0") {
      a.value = false;
    } else {
      throw ParseError("boolean annotation expected, got '" + row.fields[4] + "'", row.line);
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::string to_annotations_csv(const std::vector<RaterAnnotation>& annotations) {
  std::string out = "dialogue_id,utterance_index,task_id,rater_id,value\n";
  for (const auto& a : annotations) {
    const std::string v = std::holds_alternative<bool>(a.value) ? (std::get<bool>(a.value) ? "true" : "false")
                                                                : std::to_string(std::get<int>(a.value));
    out += csv_line({a.dialogue_id, std::to_string(a.utterance_index), a.task_id, a.rater_id, v});
  }
  return out;
}

namespace {

void check_pair(std::span<const RaterAnnotation> pair) {
  if (pair.size() != 2)
    throw AggregationError("aggregation needs exactly two annotations, got " + std::to_string(pair.size()));
  if (pair[0].dialogue_id != pair[1].dialogue_id || pair[0].utterance_index != pair[1].utterance_index ||
      pair[0].task_id != pair[1].task_id)
    throw AggregationError("annotations refer to different items");
}

}  // namespace

bool aggregate_intent_annotations(std::span<const RaterAnnotation> pair) {
  check_pair(pair);
  for (const auto& a : pair)
    if (!std::holds_alternative<bool>(a.value)) throw AggregationError("intent annotation must be boolean");
  return std::get<bool>(pair[0].value) && std::get<bool>(pair[1].value);
}

bool aggregate_perceived_annotations(std::span<const RaterAnnotation> pair, int threshold) {
  check_pair(pair);
  for (const auto& a : pair) {
    if (!std::holds_alternative<int>(a.value)) throw AggregationError("perceived annotation must be a Likert value");
    const int v = std::get<int>(a.value);
    if (v < 1 || v > 5) throw ValidationError("Likert value " + std::to_string(v) + " outside 1-5");
  }
  return std::get<int>(pair[0].value) > threshold && std::get<int>(pair[1].value) > threshold;
}

AnnotatedCorpus build_annotated_corpus(DatasetManifest dialogues, const std::vector<RaterAnnotation>& annotations,
                                       std::vector<LabelScheme> schemes, int perceived_threshold) {
  using Key = std::tuple<std::string, std::string, std::size_t>;  // task, dialogue, utterance
  std::map<Key, std::vector<RaterAnnotation>> groups;
  for (const auto& a : annotations) groups[{a.task_id, a.dialogue_id, a.utterance_index}].push_back(a);

  std::set<std::string> known;
  for (const auto& s : schemes) known.insert(s.task_id);

  AnnotatedCorpus out;
  std::vector<LabeledExample> examples;
  for (const auto& [key, group] : groups) {
    const auto& [task, dialogue_id, index] = key;
    if (!known.count(task)) continue;  // e.g. session satisfaction
    std::set<std::string> raters;
    for (const auto& a : group)
      if (!raters.insert(a.rater_id).second)
        throw ValidationError("rater " + a.rater_id + " annotated " + dialogue_id + "/" + std::to_string(index) +
                              " task " + task + " twice");
    bool positive;
    if (is_likert_task(task)) {
      positive = aggregate_perceived_annotations(group, perceived_threshold);
    } else {
      positive = aggregate_intent_annotations(group);
      if (std::get<bool>(group[0].value) != std::get<bool>(group[1].value))
        out.disagreements.push_back({dialogue_id, index, task});
    }
    examples.push_back({dialogue_id, index, task, positive ? 0u : 1u});
  }
  out.manifest = attach_labels(std::move(dialogues), std::move(schemes), std::move(examples));
  return out;
}

std::vector<std::size_t> compute_label_distribution(const DatasetManifest& manifest, std::string_view task_id) {
  const auto& s = manifest.scheme(task_id);
  std::vector<std::size_t> counts(s.class_count(), 0);
  for (const auto& e : manifest.examples)
    if (e.task_id == task_id) ++counts[e.gold_class];
  return counts;
}

}  // namespace empeval
