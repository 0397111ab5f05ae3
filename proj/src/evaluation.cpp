#include "empeval/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

namespace empeval {

using nlohmann::json;

bool FoldSplit::in_test(std::string_view id) const {
  return std::binary_search(test_ids.begin(), test_ids.end(), id, std::less<>{});
}

bool FoldSplit::in_train(std::string_view id) const {
  return std::binary_search(train_ids.begin(), train_ids.end(), id, std::less<>{});
}

std::vector<FoldSplit> make_folds(std::vector<std::string> ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("need at least 2 folds");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ValidationError("duplicate dialogue ids");
  if (ids.size() < k)
    throw ValidationError("cannot make " + std::to_string(k) + " folds from " + std::to_string(ids.size()) +
                          " dialogues");
  seeded_shuffle(ids, seed);
  std::vector<FoldSplit> folds(k);
  for (std::size_t f = 0; f < k; ++f) folds[f].fold_index = f;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (i % k == f ? folds[f].test_ids : folds[f].train_ids).push_back(ids[i]);
  for (auto& f : folds) {
    std::sort(f.train_ids.begin(), f.train_ids.end());
    std::sort(f.test_ids.begin(), f.test_ids.end());
  }
  return folds;
}

std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(manifest.dialogues.size());
  for (const auto& d : manifest.dialogues) ids.push_back(d.id);
  return make_folds(std::move(ids), k, seed);
}

std::vector<LabeledExample> split_examples(const std::vector<LabeledExample>& examples, const FoldSplit& fold,
                                           bool test) {
  std::vector<LabeledExample> out;
  for (const auto& e : examples)
    if (test ? fold.in_test(e.dialogue_id) : fold.in_train(e.dialogue_id)) out.push_back(e);
  return out;
}

// --- prediction CSV ---------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::size_t parse_size(const std::string& s, std::size_t line, const char* what) {
  const std::string t = trim(s);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw ParseError(std::string(what) + " must be a non-negative integer", line);
  return std::stoull(t);
}

}  // namespace

std::string predictions_to_csv(const std::vector<PredictionRecord>& preds) {
  std::string out = "dialogue_id,utterance_index,task_id,fold,predicted_class,parsed,log_likelihoods\n";
  for (const auto& p : preds) {
    std::vector<std::string> ll;
    for (double v : p.log_likelihoods) ll.push_back(fmt_double(v));
    out += csv_line({p.dialogue_id, std::to_string(p.utterance_index), p.task_id, std::to_string(p.fold),
                     std::to_string(p.predicted_class), p.parsed ? "1" : "0", join(ll, ";")});
  }
  return out;
}

std::vector<PredictionRecord> parse_predictions_csv(std::string_view text) {
  std::vector<PredictionRecord> out;
  for (const auto& row : parse_csv(text)) {
    if (!row.fields.empty() && row.fields[0] == "dialogue_id") continue;
    if (row.fields.size() != 7) throw ParseError("prediction row needs 7 fields", row.line);
    PredictionRecord p;
    p.dialogue_id = row.fields[0];
    p.utterance_index = parse_size(row.fields[1], row.line, "utterance_index");
    p.task_id = row.fields[2];
    p.fold = parse_size(row.fields[3], row.line, "fold");
    p.predicted_class = parse_size(row.fields[4], row.line, "predicted_class");
    p.parsed = trim(row.fields[5]) != "0";
    if (!trim(row.fields[6]).empty()) {
      for (const auto& v : split(row.fields[6], ';')) {
        try {
          p.log_likelihoods.push_back(std::stod(v));
        } catch (const std::exception&) {
          throw ParseError("bad log-likelihood '" + v + "'", row.line);
        }
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

// --- confusion and metrics ---------------------------------------------------------------

std::size_t ConfusionCounts::total() const {
  std::size_t n = 0;
  for (auto c : cells) n += c;
  return n;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (other.classes != classes) throw ValidationError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] += other.cells[i];
  return *this;
}

ConfusionCounts confusion(const std::vector<PredictionRecord>& preds, const std::vector<LabeledExample>& gold,
                          std::size_t class_count) {
  using Key = std::tuple<std::string, std::size_t, std::string>;
  std::map<Key, std::size_t> gold_by_key;
  for (const auto& g : gold) {
    if (g.gold_class >= class_count) throw ValidationError("gold class out of range");
    if (!gold_by_key.emplace(Key{g.dialogue_id, g.utterance_index, g.task_id}, g.gold_class).second)
      throw ValidationError("duplicate gold label for " + g.dialogue_id + "/" + std::to_string(g.utterance_index));
  }
  if (preds.size() != gold_by_key.size())
    throw ValidationError("prediction/gold key mismatch: " + std::to_string(preds.size()) + " predictions for " +
                          std::to_string(gold_by_key.size()) + " gold labels");
  ConfusionCounts c(class_count);
  std::set<Key> seen;
  for (const auto& p : preds) {
    const Key key{p.dialogue_id, p.utterance_index, p.task_id};
    auto it = gold_by_key.find(key);
    if (it == gold_by_key.end())
      throw ValidationError("prediction without gold label: " + p.dialogue_id + "/" +
                            std::to_string(p.utterance_index) + " task " + p.task_id);
    if (!seen.insert(key).second) throw ValidationError("duplicate prediction for " + p.dialogue_id);
    if (p.predicted_class >= class_count) throw ValidationError("predicted class out of range");
    ++c.at(it->second, p.predicted_class);
  }
  return c;
}

ConfusionCounts confusion_from_labels(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                                      std::size_t class_count) {
  if (gold.size() != pred.size()) throw ValidationError("gold and prediction lengths differ");
  ConfusionCounts c(class_count);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= class_count || pred[i] >= class_count) throw ValidationError("class index out of range");
    ++c.at(gold[i], pred[i]);
  }
  return c;
}

MetricsReport metrics_from_confusion(const ConfusionCounts& c) {
  const std::size_t total = c.total();
  if (c.classes == 0 || total == 0) throw ValidationError("cannot compute metrics from an empty confusion matrix");
  MetricsReport r;
  r.support = total;
  std::size_t trace = 0;
  for (std::size_t k = 0; k < c.classes; ++k) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < c.classes; ++j) {
      predicted += c.at(j, k);
      actual += c.at(k, j);
    }
    const double tp = static_cast<double>(c.at(k, k));
    trace += c.at(k, k);
    ClassMetrics m;
    if (predicted > 0) m.precision = tp / static_cast<double>(predicted);
    else r.zero_denominator = true;
    if (actual > 0) m.recall = tp / static_cast<double>(actual);
    else r.zero_denominator = true;
    if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    r.per_class.push_back(m);
  }
  const double n = static_cast<double>(c.classes);
  for (const auto& m : r.per_class) {
    r.macro_precision += m.precision / n;
    r.macro_recall += m.recall / n;
    r.macro_f1 += m.f1 / n;
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

TaskReport evaluate_task(const std::string& task_id, const std::vector<PredictionRecord>& preds,
                         const std::vector<LabeledExample>& gold, std::size_t class_count,
                         FoldAggregation aggregation) {
  std::vector<PredictionRecord> task_preds;
  std::vector<LabeledExample> task_gold;
  for (const auto& p : preds)
    if (p.task_id == task_id) task_preds.push_back(p);
  for (const auto& g : gold)
    if (g.task_id == task_id) task_gold.push_back(g);

  TaskReport out;
  out.task_id = task_id;
  out.predictions = task_preds.size();
  for (const auto& p : task_preds)
    if (!p.parsed) ++out.parse_failures;

  if (aggregation == FoldAggregation::pooled) {
    out.metrics = metrics_from_confusion(confusion(task_preds, task_gold, class_count));
    return out;
  }

  // per-fold mean: fold membership comes from the predictions
  std::map<std::size_t, std::vector<PredictionRecord>> by_fold;
  for (const auto& p : task_preds) by_fold[p.fold].push_back(p);
  std::map<std::tuple<std::string, std::size_t>, const LabeledExample*> gold_by_key;
  for (const auto& g : task_gold) gold_by_key[{g.dialogue_id, g.utterance_index}] = &g;
  if (task_preds.size() != task_gold.size()) throw ValidationError("prediction/gold key mismatch for " + task_id);

  std::vector<MetricsReport> reports;
  for (const auto& [fold, fp] : by_fold) {
    std::vector<LabeledExample> fg;
    for (const auto& p : fp) {
      auto it = gold_by_key.find({p.dialogue_id, p.utterance_index});
      if (it == gold_by_key.end()) throw ValidationError("prediction without gold label: " + p.dialogue_id);
      fg.push_back(*it->second);
    }
    reports.push_back(metrics_from_confusion(confusion(fp, fg, class_count)));
  }
  if (reports.empty()) throw ValidationError("no predictions for task " + task_id);
  MetricsReport mean;
  mean.per_class.resize(class_count);
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    for (std::size_t k = 0; k < class_count; ++k) {
      mean.per_class[k].precision += r.per_class[k].precision / n;
      mean.per_class[k].recall += r.per_class[k].recall / n;
      mean.per_class[k].f1 += r.per_class[k].f1 / n;
    }
    mean.macro_precision += r.macro_precision / n;
    mean.macro_recall += r.macro_recall / n;
    mean.macro_f1 += r.macro_f1 / n;
    mean.accuracy += r.accuracy / n;
    mean.support += r.support;
    mean.zero_denominator = mean.zero_denominator || r.zero_denominator;
  }
  out.metrics = mean;
  return out;
}

TaskSuiteReport suite_mean(std::vector<TaskReport> reports) {
  if (reports.empty()) throw ValidationError("suite needs at least one task report");
  TaskSuiteReport s;
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    s.macro_precision += r.metrics.macro_precision / n;
    s.macro_recall += r.metrics.macro_recall / n;
    s.macro_f1 += r.metrics.macro_f1 / n;
    s.accuracy += r.metrics.accuracy / n;
    s.parse_failures += r.parse_failures;
  }
  s.tasks = std::move(reports);
  return s;
}

// --- JSON ---------------------------------------------------------------

json to_json(const MetricsReport& r) {
  json per = json::array();
  for (const auto& m : r.per_class) per.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}});
  return {{"per_class", per},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1},
          {"accuracy", r.accuracy},
          {"support", r.support},
          {"zero_denominator", r.zero_denominator}};
}

json to_json(const TaskSuiteReport& r) {
  json tasks = json::array();
  for (const auto& t : r.tasks) {
    json j = to_json(t.metrics);
    j["task_id"] = t.task_id;
    j["parse_failures"] = t.parse_failures;
    j["predictions"] = t.predictions;
    tasks.push_back(std::move(j));
  }
  return {{"tasks", tasks},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1},
          {"accuracy", r.accuracy},
          {"parse_failures", r.parse_failures}};
}

TaskSuiteReport suite_from_json(const json& j) {
  TaskSuiteReport r;
  try {
    for (const auto& t : j.at("tasks")) {
      TaskReport tr;
      tr.task_id = t.at("task_id").get<std::string>();
      tr.parse_failures = t.value("parse_failures", std::size_t{0});
      tr.predictions = t.value("predictions", std::size_t{0});
      auto& m = tr.metrics;
      for (const auto& pc : t.at("per_class"))
        m.per_class.push_back({pc.at("precision").get<double>(), pc.at("recall").get<double>(), pc.at("f1").get<double>()});
      m.macro_precision = t.at("macro_precision").get<double>();
      m.macro_recall = t.at("macro_recall").get<double>();
      m.macro_f1 = t.at("macro_f1").get<double>();
      m.accuracy = t.at("accuracy").get<double>();
      m.support = t.value("support", std::size_t{0});
      m.zero_denominator = t.value("zero_denominator", false);
      r.tasks.push_back(std::move(tr));
    }
    r.macro_precision = j.at("macro_precision").get<double>();
    r.macro_recall = j.at("macro_recall").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.parse_failures = j.value("parse_failures", std::size_t{0});
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report JSON: ") + e.what());
  }
  return r;
}

std::string to_string(FoldAggregation a) { return a == FoldAggregation::pooled ? "pooled" : "per_fold_mean"; }

FoldAggregation fold_aggregation_from_string(std::string_view s) {
  if (s == "pooled") return FoldAggregation::pooled;
  if (s == "per_fold_mean") return FoldAggregation::per_fold_mean;
  throw ValidationError("unknown fold aggregation '" + std::string(s) + "'");
}

std::string folds_to_json(const std::vector<FoldSplit>& folds) {
  json arr = json::array();
  for (const auto& f : folds) arr.push_back({{"fold", f.fold_index}, {"train", f.train_ids}, {"test", f.test_ids}});
  return arr.dump(2) + "\n";
}

std::vector<FoldSplit> folds_from_json(std::string_view text) {
  std::vector<FoldSplit> out;
  try {
    for (const auto& f : json::parse(text)) {
      FoldSplit s;
      s.fold_index = f.at("fold").get<std::size_t>();
      s.train_ids = f.at("train").get<std::vector<std::string>>();
      s.test_ids = f.at("test").get<std::vector<std::string>>();
      std::sort(s.train_ids.begin(), s.train_ids.end());
      std::sort(s.test_ids.begin(), s.test_ids.end());
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed fold file: ") + e.what());
  }
  return out;
}

}  // namespace empeval
