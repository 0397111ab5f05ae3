#pragma once

// Constructed corpora with known ground truth, shared by unit and acceptance tests.

#include <random>
#include <string>
#include <vector>

#include "empeval/corpus.hpp"

namespace empeval::testing {

/// `n` customer/agent dialogues with 4-6 turns. Every agent turn is labeled
/// for `scheme`; it is positive iff it contains `keyword`, which is planted
/// in about half of the agent turns.
inline DatasetManifest keyword_corpus(std::size_t n, std::uint64_t seed, const LabelScheme& scheme,
                                      const std::string& keyword = "apologize") {
  static const std::vector<std::string> kWords = {
      "order",  "delivery", "account", "package", "today",   "please", "check", "status", "number", "email",
      "update", "store",    "item",   "payment", "tracking", "week",   "help",  "thanks", "system", "request",
      "card",   "address",  "return", "service", "details", "time",   "team",  "again",  "online", "support"};
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t k) { return static_cast<std::size_t>(rng() % k); };
  auto sentence = [&](bool plant) {
    const std::size_t len = 5 + pick(8);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) words.push_back(kWords[pick(kWords.size())]);
    if (plant) words.insert(words.begin() + static_cast<std::ptrdiff_t>(pick(words.size() + 1)), keyword);
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s + ".";
  };

  DatasetManifest m;
  m.name = "keyword";
  std::vector<LabeledExample> examples;
  for (std::size_t d = 0; d < n; ++d) {
    Dialogue dlg;
    dlg.id = "kw-" + std::to_string(1000 + d);
    const std::size_t turns = 4 + pick(3);
    for (std::size_t i = 0; i < turns; ++i) {
      const bool agent = i % 2 == 1;
      const bool plant = agent && pick(2) == 0;
      dlg.utterances.push_back({dlg.id, i, agent ? "agent" : "customer", sentence(plant)});
      if (agent) examples.push_back({dlg.id, i, scheme.task_id, plant ? 0u : 1u});
    }
    m.dialogues.push_back(std::move(dlg));
  }
  return attach_labels(std::move(m), {scheme}, std::move(examples));
}

}  // namespace empeval::testing
