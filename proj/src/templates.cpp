#include "empeval/templates.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <random>
#include <set>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

#ifndef EMPEVAL_DEFAULT_ASSET_DIR
#define EMPEVAL_DEFAULT_ASSET_DIR "assets"
#endif

namespace empeval {

namespace {

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

std::string fold_newlines(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

struct ExpandedLayout {
  std::vector<std::string> header;
  std::vector<std::string> body;  // still holds {Dialogue} and {utterance}
};

ExpandedLayout expand(const InstructionTemplate& t) {
  ExpandedLayout out;
  bool in_body = false;
  for (const auto& raw : split(t.layout, '\n')) {
    std::string line = raw;
    if (line.find("{definition}") != std::string::npos) {
      if (!t.definition_text) continue;
      line = replace_all(line, "{definition}", *t.definition_text);
    }
    line = replace_all(line, "{domain}", t.domain_text);
    line = replace_all(line, "{options}", t.options_text);
    line = replace_all(line, "{intent}", t.intent_text);

    // only {utterance} and {Dialogue} may remain
    for (std::size_t open = line.find('{'); open != std::string::npos; open = line.find('{', open + 1)) {
      const std::size_t close = line.find('}', open);
      if (close == std::string::npos) break;
      const std::string slot = line.substr(open + 1, close - open - 1);
      const bool ident = !slot.empty() && std::all_of(slot.begin(), slot.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_';
      });
      if (ident && slot != "utterance" && slot != "Dialogue")
        throw TemplateError("unresolved slot {" + slot + "} in template " + t.task_id);
    }

    if (trim(line) == "{Dialogue}") in_body = true;
    (in_body ? out.body : out.header).push_back(std::move(line));
  }
  return out;
}

std::string render_body(const std::vector<std::string>& body, const std::string& dialogue_text,
                        const std::string& utterance) {
  std::vector<std::string> lines;
  for (const auto& line : body) {
    if (trim(line) == "{Dialogue}") {
      lines.push_back(dialogue_text);
      continue;
    }
    // single left-to-right pass so substituted text is never rescanned
    std::string out;
    std::size_t pos = 0;
    for (std::size_t hit = line.find("{utterance}"); hit != std::string::npos; hit = line.find("{utterance}", pos)) {
      out.append(line, pos, hit - pos);
      out += utterance;
      pos = hit + std::string_view("{utterance}").size();
    }
    out.append(line, pos, std::string::npos);
    lines.push_back(std::move(out));
  }
  return join(lines, "\n");
}

bool contains_word_once(std::string_view text, std::string_view word) {
  const std::string hay = to_lower_ascii(text);
  const std::string w = to_lower_ascii(word);
  std::size_t n = 0;
  for (std::size_t pos = hay.find(w); pos != std::string::npos; pos = hay.find(w, pos + 1)) {
    const bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(hay[pos - 1]));
    const std::size_t end = pos + w.size();
    const bool right = end >= hay.size() || !std::isalnum(static_cast<unsigned char>(hay[end]));
    if (left && right) ++n;
  }
  return n == 1;
}

}  // namespace

InstructionTemplate parse_template(std::string_view text) {
  std::map<std::string, std::string> fields;
  std::string current;
  std::vector<std::string> buffer;
  auto flush = [&] {
    if (current.empty()) return;
    while (!buffer.empty() && trim(buffer.back()).empty()) buffer.pop_back();
    fields[current] = join(buffer, "\n");
    buffer.clear();
  };
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == '@') {
      flush();
      const std::size_t sp = line.find(' ');
      current = line.substr(1, sp == std::string::npos ? std::string::npos : sp - 1);
      if (fields.count(current)) throw TemplateError("duplicate field @" + current);
      if (sp != std::string::npos) buffer.push_back(line.substr(sp + 1));
      continue;
    }
    if (current.empty()) {
      if (!trim(line).empty()) throw TemplateError("text before the first @field");
      continue;
    }
    buffer.push_back(line);
  }
  flush();

  static const std::set<std::string> kKnown = {"task", "intent", "definition", "domain", "options", "layout"};
  for (const auto& [k, v] : fields)
    if (!kKnown.count(k)) throw TemplateError("unknown template field @" + k);
  for (const char* required : {"task", "intent", "domain", "options", "layout"})
    if (!fields.count(required)) throw TemplateError(std::string("template missing @") + required);

  InstructionTemplate t;
  t.task_id = trim(fields["task"]);
  t.intent_text = fields["intent"];
  t.domain_text = fields["domain"];
  t.options_text = fields["options"];
  t.layout = fields["layout"];
  if (fields.count("definition") && !trim(fields["definition"]).empty()) t.definition_text = fields["definition"];

  std::size_t dialogue_lines = 0;
  for (const auto& line : split(t.layout, '\n'))
    if (trim(line) == "{Dialogue}") ++dialogue_lines;
  if (dialogue_lines != 1) throw TemplateError("layout of " + t.task_id + " needs exactly one {Dialogue} line");
  if (count_occurrences(t.layout, "{intent}") != 1 || count_occurrences(t.layout, "{options}") != 1)
    throw TemplateError("layout of " + t.task_id + " needs exactly one {intent} and one {options}");
  const auto pos_dialogue = t.layout.find("{Dialogue}");
  if (t.layout.find("{intent}") < pos_dialogue)
    throw TemplateError("layout of " + t.task_id + " must put the question after the dialogue");
  expand(t);  // surfaces unresolved slots early
  return t;
}

InstructionTemplate load_template_file(const std::filesystem::path& path) {
  try {
    return parse_template(read_file(path));
  } catch (const TemplateError& e) {
    throw TemplateError(path.string() + ": " + e.what());
  }
}

std::map<std::string, InstructionTemplate> load_template_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw TemplateError("template directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, InstructionTemplate> out;
  for (const auto& f : files) {
    auto t = load_template_file(f);
    const std::string id = t.task_id;
    if (!out.emplace(id, std::move(t)).second) throw TemplateError("two templates for task " + id);
  }
  return out;
}

std::filesystem::path builtin_template_dir(std::string_view dataset) {
  const char* env = std::getenv("EMPEVAL_ASSET_DIR");
  const std::filesystem::path root = env && *env ? env : EMPEVAL_DEFAULT_ASSET_DIR;
  return root / "templates" / std::string(dataset);
}

void validate_template(const InstructionTemplate& t, const LabelScheme& scheme) {
  if (t.task_id != scheme.task_id)
    throw TemplateError("template " + t.task_id + " does not belong to task " + scheme.task_id);
  for (const auto& c : scheme.classes)
    if (!contains_word_once(t.options_text, c))
      throw TemplateError("options of " + t.task_id + " must name class '" + c + "' exactly once");
}

VerbalizerSet word_verbalizers(const LabelScheme& scheme) { return {scheme.classes, false}; }

VerbalizerSet special_token_verbalizers(const LabelScheme& scheme) {
  VerbalizerSet v;
  v.special = true;
  for (const auto& c : scheme.classes) v.tokens.push_back("<" + to_lower_ascii(c) + ">");
  return v;
}

VerbalizerSet finetuning_verbalizers(const LabelScheme& scheme) {
  return scheme.kind == SchemeKind::ternary ? special_token_verbalizers(scheme) : word_verbalizers(scheme);
}

namespace {

void check_candidates(const VerbalizerSet& v, const LabelScheme& scheme) {
  if (v.tokens.size() != scheme.class_count())
    throw TemplateError("verbalizer count does not match the classes of " + scheme.task_id);
  std::set<std::string> distinct(v.tokens.begin(), v.tokens.end());
  if (distinct.size() != v.tokens.size() || distinct.count(""))
    throw TemplateError("verbalizers of " + scheme.task_id + " must be non-empty and distinct");
}

}  // namespace

RenderedPrompt render_instruction(const InstructionTemplate& t, const ContextWindow& w, const LabelScheme& scheme,
                                  const VerbalizerSet& verbalizers, bool include_instruction) {
  check_candidates(verbalizers, scheme);
  const auto layout = expand(t);
  const std::string body = render_body(layout.body, render_window_text(w, scheme), fold_newlines(w.target().text));
  RenderedPrompt p;
  p.candidates = verbalizers.tokens;
  if (include_instruction && !layout.header.empty()) p.text = join(layout.header, "\n") + "\n";
  p.text += body;
  return p;
}

std::vector<LabeledExample> select_exemplar_examples(const std::vector<LabeledExample>& train,
                                                     const LabelScheme& scheme, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledExample> out;
  for (std::size_t c = 0; c < scheme.class_count(); ++c) {
    std::vector<const LabeledExample*> pool;
    for (const auto& e : train)
      if (e.task_id == scheme.task_id && e.gold_class == c) pool.push_back(&e);
    if (pool.empty())
      throw ValidationError("no training example of class '" + scheme.classes[c] + "' for task " + scheme.task_id);
    out.push_back(*pool[static_cast<std::size_t>(rng() % pool.size())]);
  }
  return out;
}

std::vector<FewShotExemplar> select_exemplars(const DatasetManifest& manifest, const std::vector<LabeledExample>& train,
                                              const LabelScheme& scheme, const WindowConfig& window,
                                              const VerbalizerSet& verbalizers, std::uint64_t seed) {
  check_candidates(verbalizers, scheme);
  std::vector<FewShotExemplar> out;
  for (const auto& e : select_exemplar_examples(train, scheme, seed)) {
    const auto w = build_window(manifest.dialogue(e.dialogue_id), e.utterance_index, window);
    out.push_back({render_window_text(w, scheme), fold_newlines(w.target().text), verbalizers.tokens[e.gold_class]});
  }
  return out;
}

RenderedPrompt render_fewshot_prompt(const InstructionTemplate& t, const std::vector<FewShotExemplar>& exemplars,
                                     const ContextWindow& w, const LabelScheme& scheme,
                                     const VerbalizerSet& verbalizers) {
  check_candidates(verbalizers, scheme);
  const auto layout = expand(t);
  std::vector<std::string> parts = layout.header;
  for (const auto& ex : exemplars) {
    parts.push_back(render_body(layout.body, ex.dialogue_text, ex.utterance));
    parts.push_back(ex.gold_verbalizer);
  }
  parts.push_back(render_body(layout.body, render_window_text(w, scheme), fold_newlines(w.target().text)));
  return {join(parts, "\n"), verbalizers.tokens};
}

}  // namespace empeval
