#include "empeval/windowing.hpp"

#include <algorithm>

#include "empeval/error.hpp"

namespace empeval {

ContextWindow build_window(const Dialogue& dialogue, std::size_t target_index, const WindowConfig& cfg) {
  const std::size_t n = dialogue.utterances.size();
  if (target_index >= n)
    throw InputError("target index " + std::to_string(target_index) + " out of range for dialogue " + dialogue.id +
                     " with " + std::to_string(n) + " utterances");
  const std::size_t first = target_index - std::min(cfg.preceding, target_index);
  const std::size_t last = target_index + std::min(cfg.proceeding, n - 1 - target_index);

  ContextWindow w;
  w.dialogue_id = dialogue.id;
  w.target_index = target_index;
  w.target_position = target_index - first;
  w.members.assign(dialogue.utterances.begin() + static_cast<std::ptrdiff_t>(first),
                   dialogue.utterances.begin() + static_cast<std::ptrdiff_t>(last + 1));
  return w;
}

std::string render_member(const Utterance& u) {
  std::string text = u.text;
  std::replace(text.begin(), text.end(), '\n', ' ');
  std::replace(text.begin(), text.end(), '\r', ' ');
  return u.role + ": " + text;
}

std::string render_window_text(const ContextWindow& window, const LabelScheme& /*scheme*/) {
  std::string out;
  for (std::size_t i = 0; i < window.members.size(); ++i) {
    if (i) out += '\n';
    out += render_member(window.members[i]);
  }
  return out;
}

ContextWindow fit_to_budget(ContextWindow window, const std::function<std::size_t(const ContextWindow&)>& cost,
                            std::size_t budget) {
  while (cost(window) > budget) {
    const std::size_t before = window.target_position;
    const std::size_t after = window.members.size() - 1 - window.target_position;
    if (before == 0 && after == 0)
      throw InputError("target utterance of dialogue " + window.dialogue_id + " exceeds the input budget of " +
                       std::to_string(budget) + " tokens");
    if (before >= after) {
      window.members.erase(window.members.begin());
      --window.target_position;
    } else {
      window.members.pop_back();
    }
  }
  return window;
}

}  // namespace empeval
