#include "empeval/analysis.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

namespace empeval {

namespace {

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// unbiased sample variance
double variance_of(std::span<const double> v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

double two_sided_t(double t, double df) {
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
}

}  // namespace

GroupStats group_stats(std::span<const double> values) {
  GroupStats g;
  g.n = values.size();
  if (g.n == 0) return g;
  g.mean = mean_of(values);
  if (g.n >= 2) g.standard_error = std::sqrt(variance_of(values, *g.mean) / static_cast<double>(g.n));
  return g;
}

ConditionedStats conditioned_mean_se(std::span<const double> ratings, std::span<const bool> flags,
                                     std::string intent_task, std::string dimension_task) {
  if (ratings.size() != flags.size()) throw ValidationError("every rating needs an intent flag");
  std::vector<double> yes, no;
  for (std::size_t i = 0; i < ratings.size(); ++i) (flags[i] ? yes : no).push_back(ratings[i]);
  return {std::move(intent_task), std::move(dimension_task), group_stats(yes), group_stats(no)};
}

std::optional<TTestResult> welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) return std::nullopt;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean_of(a), mb = mean_of(b);
  const double qa = variance_of(a, ma) / na, qb = variance_of(b, mb) / nb;
  const double se2 = qa + qb;
  if (!(se2 > 0.0)) return std::nullopt;
  TTestResult r;
  r.statistic = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  r.p_value = two_sided_t(r.statistic, r.df);
  return r;
}

std::optional<TTestResult> pooled_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) return std::nullopt;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean_of(a), mb = mean_of(b);
  const double sp2 = ((na - 1.0) * variance_of(a, ma) + (nb - 1.0) * variance_of(b, mb)) / (na + nb - 2.0);
  if (!(sp2 > 0.0)) return std::nullopt;
  TTestResult r;
  r.statistic = (ma - mb) / std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  r.df = na + nb - 2.0;
  r.p_value = two_sided_t(r.statistic, r.df);
  return r;
}

std::optional<MannWhitneyResult> mann_whitney_u_test(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return std::nullopt;
  std::vector<std::pair<double, bool>> all;  // value, from a
  for (double x : a) all.push_back({x, true});
  for (double x : b) all.push_back({x, false});
  std::sort(all.begin(), all.end(), [](const auto& l, const auto& r) { return l.first < r.first; });

  const double n = static_cast<double>(all.size());
  double rank_sum_a = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum_a += avg_rank;
    i = j;
  }
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  MannWhitneyResult r;
  r.u = rank_sum_a - na * (na + 1.0) / 2.0;
  const double mu = na * nb / 2.0;
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (!(var > 0.0)) return std::nullopt;
  const double u_big = std::max(r.u, na * nb - r.u);
  const double z = (u_big - mu - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));  // 2 * normal survival
  return r;
}

std::string to_string(SignificanceTest t) {
  switch (t) {
    case SignificanceTest::welch: return "welch";
    case SignificanceTest::pooled: return "pooled";
    case SignificanceTest::mann_whitney: return "mann_whitney";
  }
  return "welch";
}

SignificanceTest significance_test_from_string(std::string_view s) {
  if (s == "welch") return SignificanceTest::welch;
  if (s == "pooled") return SignificanceTest::pooled;
  if (s == "mann_whitney") return SignificanceTest::mann_whitney;
  throw ValidationError("unknown significance test '" + std::string(s) + "'");
}

std::optional<double> significance_p_value(SignificanceTest test, std::span<const double> a,
                                           std::span<const double> b) {
  switch (test) {
    case SignificanceTest::welch:
      if (auto r = welch_t_test(a, b)) return r->p_value;
      return std::nullopt;
    case SignificanceTest::pooled:
      if (auto r = pooled_t_test(a, b)) return r->p_value;
      return std::nullopt;
    case SignificanceTest::mann_whitney:
      if (auto r = mann_whitney_u_test(a, b)) return r->p_value;
      return std::nullopt;
  }
  return std::nullopt;
}

Mark mark_for(std::optional<double> p) {
  if (!p) return Mark::none;
  if (*p < 0.001) return Mark::double_dagger;
  if (*p < 0.01) return Mark::dagger;
  if (*p < 0.05) return Mark::diamond;
  return Mark::none;
}

std::string mark_symbol(Mark m) {
  switch (m) {
    case Mark::none: return "";
    case Mark::diamond: return "◇";
    case Mark::dagger: return "†";
    case Mark::double_dagger: return "‡";
  }
  return "";
}

// --- agreement ---------------------------------------------------------------

double agreement_rate(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ValidationError("agreement needs paired annotations");
  if (a.empty()) throw ValidationError("agreement of an empty annotation set");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

KappaResult cohens_kappa(std::span<const int> a, std::span<const int> b) {
  const double po = agreement_rate(a, b);
  std::map<int, double> ca, cb;
  for (int x : a) ca[x] += 1.0;
  for (int x : b) cb[x] += 1.0;
  const double n = static_cast<double>(a.size());
  double pe = 0.0;
  for (const auto& [k, v] : ca)
    if (auto it = cb.find(k); it != cb.end()) pe += (v / n) * (it->second / n);
  if (1.0 - pe <= 1e-15) return {1.0, true};
  return {(po - pe) / (1.0 - pe), false};
}

namespace {

int code_of(const RaterAnnotation& r, int threshold) {
  if (std::holds_alternative<bool>(r.value)) return std::get<bool>(r.value) ? 1 : 0;
  return std::get<int>(r.value) > threshold ? 1 : 0;
}

using ItemKey = std::tuple<std::string, std::string, std::size_t>;  // task, dialogue, utterance

std::map<ItemKey, std::vector<const RaterAnnotation*>> group_items(const std::vector<RaterAnnotation>& annotations) {
  std::map<ItemKey, std::vector<const RaterAnnotation*>> items;
  for (const auto& a : annotations) items[{a.task_id, a.dialogue_id, a.utterance_index}].push_back(&a);
  for (auto& [k, v] : items)
    std::sort(v.begin(), v.end(), [](const auto* l, const auto* r) { return l->rater_id < r->rater_id; });
  return items;
}

}  // namespace

AgreementReport agreement_report(const std::vector<RaterAnnotation>& annotations, int threshold) {
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> per_task;
  for (const auto& [key, group] : group_items(annotations)) {
    const auto& [task, dialogue, index] = key;
    if (group.size() != 2)
      throw AggregationError("item " + dialogue + "/" + std::to_string(index) + " task " + task + " has " +
                             std::to_string(group.size()) + " annotations, expected 2");
    if (group[0]->rater_id == group[1]->rater_id)
      throw AggregationError("item " + dialogue + "/" + std::to_string(index) + " rated twice by " + group[0]->rater_id);
    auto& [ra, rb] = per_task[task];
    ra.push_back(code_of(*group[0], threshold));
    rb.push_back(code_of(*group[1], threshold));
  }
  AgreementReport r;
  for (const auto& [task, pair] : per_task) {
    TaskAgreement t;
    t.task_id = task;
    t.items = pair.first.size();
    t.agreement = agreement_rate(pair.first, pair.second);
    t.kappa = cohens_kappa(pair.first, pair.second);
    r.tasks.push_back(t);
  }
  if (!r.tasks.empty()) {
    for (const auto& t : r.tasks) {
      r.mean_agreement += t.agreement;
      r.mean_kappa += t.kappa.kappa;
    }
    r.mean_agreement /= static_cast<double>(r.tasks.size());
    r.mean_kappa /= static_cast<double>(r.tasks.size());
  }
  return r;
}

// --- conditioned table ---------------------------------------------------------------

ConditionedTable build_conditioned_table(const std::vector<RaterAnnotation>& annotations,
                                         const std::vector<std::string>& intents,
                                         const std::vector<std::string>& dimensions, SignificanceTest test) {
  using Utt = std::pair<std::string, std::size_t>;
  std::map<std::string, std::map<Utt, bool>> flags;          // intent -> utterance -> both raters true
  std::map<std::string, std::map<Utt, double>> ratings;      // dimension -> utterance -> rater mean
  std::map<std::string, double> satisfaction;                // dialogue -> rater mean
  std::map<std::string, std::size_t> sampled;                // dialogue -> first intent-annotated utterance

  const std::set<std::string> intent_set(intents.begin(), intents.end());
  for (const auto& [key, group] : group_items(annotations)) {
    const auto& [task, dialogue, index] = key;
    if (intent_set.count(task)) {
      std::vector<RaterAnnotation> pair;
      for (const auto* a : group) pair.push_back(*a);
      flags[task][{dialogue, index}] = aggregate_intent_annotations(pair);
      auto [it, inserted] = sampled.emplace(dialogue, index);
      if (!inserted) it->second = std::min(it->second, index);
    } else if (is_likert_task(task)) {
      double s = 0.0;
      for (const auto* a : group) {
        if (!std::holds_alternative<int>(a->value)) throw AggregationError("Likert task " + task + " has a boolean value");
        s += std::get<int>(a->value);
      }
      const double mean = s / static_cast<double>(group.size());
      if (task == kSatisfactionTask) {
        if (satisfaction.count(dialogue))
          throw ValidationError("dialogue " + dialogue + " has satisfaction ratings on several utterances");
        satisfaction[dialogue] = mean;
      } else {
        ratings[task][{dialogue, index}] = mean;
      }
    }
  }

  ConditionedTable t;
  t.intents = intents;
  t.dimensions = dimensions;
  t.test = test;
  for (const auto& intent : intents) {
    std::vector<TableCell> row;
    const auto& f = flags[intent];
    for (const auto& dim : dimensions) {
      std::vector<double> values;
      std::vector<char> marks;
      if (dim == kSatisfactionTask) {
        for (const auto& [dialogue, index] : sampled) {
          auto fi = f.find({dialogue, index});
          auto si = satisfaction.find(dialogue);
          if (fi == f.end() || si == satisfaction.end()) continue;
          values.push_back(si->second);
          marks.push_back(fi->second);
        }
      } else {
        const auto& r = ratings[dim];
        for (const auto& [utt, flag] : f) {
          auto ri = r.find(utt);
          if (ri == r.end()) continue;
          values.push_back(ri->second);
          marks.push_back(flag);
        }
      }
      std::vector<bool> bflags(marks.begin(), marks.end());
      std::vector<double> yes, no;
      for (std::size_t i = 0; i < values.size(); ++i) (bflags[i] ? yes : no).push_back(values[i]);
      TableCell cell;
      cell.stats = {intent, dim, group_stats(yes), group_stats(no)};
      cell.mark.p_value = significance_p_value(test, yes, no);
      cell.mark.mark = mark_for(cell.mark.p_value);
      row.push_back(std::move(cell));
    }
    t.cells.push_back(std::move(row));
  }
  return t;
}

namespace {

std::string num(std::optional<double> v, int precision) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

std::string num_full(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(12) << *v;
  return os.str();
}

std::string cell_text(const GroupStats& g) {
  if (!g.mean) return "n/a";
  return num(g.mean, 2) + " (" + (g.standard_error ? num(g.standard_error, 2) : "-") + ")";
}

// display width, counting each UTF-8 code point once
std::size_t width_of(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return w;
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w > width_of(s) ? w - width_of(s) : 0, ' '); }

}  // namespace

std::string table_to_csv(const ConditionedTable& t) {
  std::vector<std::string> header = {"intent"};
  for (const auto& d : t.dimensions)
    for (const char* f : {"true_n", "true_mean", "true_se", "false_n", "false_mean", "false_se", "p_value", "mark"})
      header.push_back(d + "_" + f);
  std::string out = csv_line(header);
  for (std::size_t i = 0; i < t.intents.size(); ++i) {
    std::vector<std::string> row = {t.intents[i]};
    for (const auto& c : t.cells[i]) {
      const auto& y = c.stats.with_intent;
      const auto& n = c.stats.without_intent;
      row.insert(row.end(), {std::to_string(y.n), num_full(y.mean), num_full(y.standard_error), std::to_string(n.n),
                             num_full(n.mean), num_full(n.standard_error), num_full(c.mark.p_value),
                             mark_symbol(c.mark.mark)});
    }
    out += csv_line(row);
  }
  return out;
}

std::string table_to_grid(const ConditionedTable& t) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> h1 = {"intent"}, h2 = {""};
  for (const auto& d : t.dimensions) {
    h1.insert(h1.end(), {d, "", ""});
    h2.insert(h2.end(), {"True", "False", ""});
  }
  rows.push_back(h1);
  rows.push_back(h2);
  for (std::size_t i = 0; i < t.intents.size(); ++i) {
    std::vector<std::string> r = {t.intents[i]};
    for (const auto& c : t.cells[i])
      r.insert(r.end(), {cell_text(c.stats.with_intent), cell_text(c.stats.without_intent), mark_symbol(c.mark.mark)});
    rows.push_back(std::move(r));
  }
  std::vector<std::size_t> widths(rows.front().size(), 0);
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.size(); ++k) widths[k] = std::max(widths[k], width_of(r[k]));
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t k = 0; k < r.size(); ++k) line += pad(r[k], widths[k]) + (k + 1 < r.size() ? "  " : "");
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace empeval
