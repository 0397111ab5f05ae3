#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "empeval/corpus.hpp"

namespace empeval {

struct WindowConfig {
  std::size_t preceding = 3;
  std::size_t proceeding = 3;
};

/// Target utterance plus its surrounding context, in dialogue order.
struct ContextWindow {
  std::string dialogue_id;
  std::size_t target_index = 0;
  std::vector<Utterance> members;
  std::size_t target_position = 0;

  const Utterance& target() const { return members.at(target_position); }
};

/// Truncates at dialogue boundaries; no padding.
ContextWindow build_window(const Dialogue& dialogue, std::size_t target_index, const WindowConfig& cfg);

/// "<role>: <text>" with line breaks inside the text folded to spaces.
std::string render_member(const Utterance& u);
/// One member per line, joined by '\n', no trailing newline.
std::string render_window_text(const ContextWindow& window, const LabelScheme& scheme);

/// Drops context members farthest from the target until `cost(window)`
/// fits in `budget`. At equal distance the preceding member goes first.
/// Throws InputError when the target alone does not fit.
ContextWindow fit_to_budget(ContextWindow window, const std::function<std::size_t(const ContextWindow&)>& cost,
                            std::size_t budget);

}  // namespace empeval
