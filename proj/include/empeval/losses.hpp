#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "empeval/error.hpp"

namespace empeval {

struct LossResult {
  double value = 0.0;
  std::vector<double> gradient;  // d value / d logits
};

struct FocalConfig {
  double gamma = 2.0;
};

struct LdamConfig {
  std::vector<std::size_t> class_counts;
  double max_margin = 0.5;
  double scale = 30.0;
};

enum class LossKind { cross_entropy, focal, ldam };

namespace detail {

inline void check_logits(std::span<const double> logits, std::size_t gold) {
  if (logits.empty()) throw InputError("empty logit vector");
  if (gold >= logits.size())
    throw InputError("gold class " + std::to_string(gold) + " out of range for " + std::to_string(logits.size()) +
                     " logits");
  for (double z : logits)
    if (!std::isfinite(z)) throw InputError("non-finite logit");
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - m));
  for (auto& v : p) v /= sum;
  return p;
}

inline double log_softmax_at(std::span<const double> logits, std::size_t k) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  return logits[k] - m - std::log(sum);
}

}  // namespace detail

/// -log softmax(logits)[gold]; gradient softmax - onehot.
inline LossResult cross_entropy(std::span<const double> logits, std::size_t gold) {
  detail::check_logits(logits, gold);
  LossResult r;
  r.value = -detail::log_softmax_at(logits, gold);
  r.gradient = detail::softmax(logits);
  r.gradient[gold] -= 1.0;
  return r;
}

/// -(1 - p_t)^gamma * log p_t, p_t clamped to [1e-12, 1].
inline LossResult focal_loss(std::span<const double> logits, std::size_t gold, const FocalConfig& cfg) {
  if (cfg.gamma < 0.0) throw InputError("focal gamma must be non-negative");
  if (cfg.gamma == 0.0) return cross_entropy(logits, gold);
  detail::check_logits(logits, gold);

  const auto p = detail::softmax(logits);
  const double log_pt = std::max(detail::log_softmax_at(logits, gold), std::log(1e-12));
  const double pt = std::exp(log_pt);
  const double q = 1.0 - pt;
  const double g = cfg.gamma;

  LossResult r;
  r.value = -std::pow(q, g) * log_pt;
  // dL/dz_k = [g q^(g-1) p_t log p_t - q^g] (delta_kt - p_k)
  const double first = q > 0.0 ? g * std::pow(q, g - 1.0) * pt * log_pt : 0.0;
  const double coeff = first - std::pow(q, g);
  r.gradient.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) r.gradient[k] = coeff * ((k == gold ? 1.0 : 0.0) - p[k]);
  return r;
}

/// Delta_j proportional to n_j^(-1/4), scaled so the rarest class gets max_margin.
inline std::vector<double> ldam_margins(const LdamConfig& cfg) {
  if (cfg.class_counts.empty()) throw InputError("LDAM needs class counts");
  for (auto n : cfg.class_counts)
    if (n == 0) throw InputError("LDAM class counts must be at least 1");
  const double n_min = static_cast<double>(*std::min_element(cfg.class_counts.begin(), cfg.class_counts.end()));
  std::vector<double> out;
  out.reserve(cfg.class_counts.size());
  for (auto n : cfg.class_counts) out.push_back(cfg.max_margin * std::pow(n_min / static_cast<double>(n), 0.25));
  return out;
}

/// Cross-entropy after lowering the gold logit by scale * margin[gold].
inline LossResult ldam_loss(std::span<const double> logits, std::size_t gold, std::span<const double> margins,
                            double scale) {
  detail::check_logits(logits, gold);
  if (margins.size() != logits.size()) throw InputError("LDAM margin count does not match logits");
  std::vector<double> shifted(logits.begin(), logits.end());
  shifted[gold] -= scale * margins[gold];
  return cross_entropy(shifted, gold);
}

inline LossResult ldam_loss(std::span<const double> logits, std::size_t gold, const LdamConfig& cfg) {
  const auto margins = ldam_margins(cfg);
  return ldam_loss(logits, gold, margins, cfg.scale);
}

}  // namespace empeval
