#include "empeval/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <set>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

namespace empeval {

using nlohmann::json;

// --- config ---------------------------------------------------------------

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "ce";
    case LossKind::focal: return "focal";
    case LossKind::ldam: return "ldam";
  }
  return "ce";
}

LossKind loss_kind_from_string(std::string_view s) {
  const std::string k = to_lower_ascii(s);
  if (k == "ce" || k == "cross_entropy") return LossKind::cross_entropy;
  if (k == "focal") return LossKind::focal;
  if (k == "ldam") return LossKind::ldam;
  throw ValidationError("unknown loss '" + std::string(s) + "' (expected ce, focal or ldam)");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (cfg.patience > cfg.max_epochs) throw ValidationError("patience must not exceed max_epochs");
  if (cfg.batch_size == 0) throw ValidationError("batch_size must be at least 1");
  if (cfg.grad_accumulation == 0) throw ValidationError("grad_accumulation must be at least 1");
  if (cfg.focal_gamma < 0.0) throw ValidationError("focal_gamma must be non-negative");
  if (cfg.ldam_max_margin < 0.0 || cfg.ldam_scale <= 0.0) throw ValidationError("invalid LDAM settings");
  if (cfg.weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
  if (cfg.monitor == MonitorSplit::dev && !(cfg.dev_fraction > 0.0 && cfg.dev_fraction < 1.0))
    throw ValidationError("dev_fraction must lie in (0, 1)");
}

json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"loss", to_string(cfg.loss)},
          {"focal_gamma", cfg.focal_gamma},
          {"ldam_max_margin", cfg.ldam_max_margin},
          {"ldam_scale", cfg.ldam_scale},
          {"window", {{"preceding", cfg.window.preceding}, {"proceeding", cfg.window.proceeding}}},
          {"use_instructions", cfg.use_instructions},
          {"seed", cfg.seed},
          {"batch_size", cfg.batch_size},
          {"grad_accumulation", cfg.grad_accumulation},
          {"weight_decay", cfg.weight_decay},
          {"monitor", cfg.monitor == MonitorSplit::test ? "test" : "dev"},
          {"dev_fraction", cfg.dev_fraction}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("train config must be an object");
  static const std::set<std::string> kKeys = {
      "learning_rate", "max_epochs", "patience",   "loss",       "focal_gamma",       "ldam_max_margin",
      "ldam_scale",    "window",     "use_instructions", "seed", "batch_size",        "grad_accumulation",
      "weight_decay",  "monitor",    "dev_fraction"};
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) throw ValidationError("unknown train config key '" + k + "'");
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
    c.ldam_max_margin = j.value("ldam_max_margin", c.ldam_max_margin);
    c.ldam_scale = j.value("ldam_scale", c.ldam_scale);
    if (j.contains("window")) {
      c.window.preceding = j.at("window").value("preceding", c.window.preceding);
      c.window.proceeding = j.at("window").value("proceeding", c.window.proceeding);
    }
    c.use_instructions = j.value("use_instructions", c.use_instructions);
    c.seed = j.value("seed", c.seed);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.grad_accumulation = j.value("grad_accumulation", c.grad_accumulation);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("monitor")) {
      const auto m = j.at("monitor").get<std::string>();
      if (m == "test") c.monitor = MonitorSplit::test;
      else if (m == "dev") c.monitor = MonitorSplit::dev;
      else throw ValidationError("monitor must be 'test' or 'dev'");
    }
    c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad train config: ") + e.what());
  }
  validate(c);
  return c;
}

LossResult apply_loss(const TrainConfig& cfg, std::span<const double> logits, std::size_t gold,
                      std::span<const double> ldam_margins) {
  switch (cfg.loss) {
    case LossKind::cross_entropy: return cross_entropy(logits, gold);
    case LossKind::focal: return focal_loss(logits, gold, {cfg.focal_gamma});
    case LossKind::ldam: return ldam_loss(logits, gold, ldam_margins, cfg.ldam_scale);
  }
  return cross_entropy(logits, gold);
}

// --- early stopping / pooling ---------------------------------------------------------------

StopDecision early_stop_check(std::span<const double> history, std::size_t patience) {
  if (history.empty()) throw InputError("early stopping needs a non-empty history");
  if (history.size() <= patience) return StopDecision::continue_training;
  const std::size_t split = history.size() - patience;
  const double best_prior = *std::max_element(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(split));
  for (std::size_t i = split; i < history.size(); ++i)
    if (history[i] > best_prior) return StopDecision::continue_training;
  return StopDecision::stop;
}

std::vector<double> mean_pool_target(const EmbeddingSequence& seq, TokenSpan span) {
  if (span.empty()) throw InputError("cannot pool an empty token span");
  if (span.end > seq.token_count()) throw InputError("token span outside the sequence");
  std::vector<double> out(seq.dim, 0.0);
  for (std::size_t k = span.begin; k < span.end; ++k) {
    const auto v = seq.token(k);
    for (std::size_t j = 0; j < seq.dim; ++j) out[j] += v[j];
  }
  for (auto& x : out) x /= static_cast<double>(span.size());
  return out;
}

// --- serialization helpers ---------------------------------------------------------------

json to_json(const LabelScheme& s) {
  json j = {{"task_id", s.task_id},
            {"display_name", s.display_name},
            {"kind", s.kind == SchemeKind::binary ? "binary" : "ternary"},
            {"classes", s.classes},
            {"target_role", s.target_role},
            {"domain_text", s.domain_text}};
  if (s.definition_text) j["definition_text"] = *s.definition_text;
  return j;
}

LabelScheme label_scheme_from_json(const json& j) {
  LabelScheme s;
  s.task_id = j.at("task_id").get<std::string>();
  s.display_name = j.at("display_name").get<std::string>();
  s.kind = j.at("kind").get<std::string>() == "binary" ? SchemeKind::binary : SchemeKind::ternary;
  s.classes = j.at("classes").get<std::vector<std::string>>();
  s.target_role = j.at("target_role").get<std::string>();
  s.domain_text = j.at("domain_text").get<std::string>();
  if (j.contains("definition_text")) s.definition_text = j.at("definition_text").get<std::string>();
  validate_scheme(s);
  return s;
}

namespace {

json template_to_json(const InstructionTemplate& t) {
  json j = {{"task_id", t.task_id},
            {"intent_text", t.intent_text},
            {"domain_text", t.domain_text},
            {"options_text", t.options_text},
            {"layout", t.layout}};
  if (t.definition_text) j["definition_text"] = *t.definition_text;
  return j;
}

InstructionTemplate template_from_json(const json& j) {
  InstructionTemplate t;
  t.task_id = j.at("task_id").get<std::string>();
  t.intent_text = j.at("intent_text").get<std::string>();
  t.domain_text = j.at("domain_text").get<std::string>();
  t.options_text = j.at("options_text").get<std::string>();
  t.layout = j.at("layout").get<std::string>();
  if (j.contains("definition_text")) t.definition_text = j.at("definition_text").get<std::string>();
  return t;
}

json window_to_json(const WindowConfig& w) { return {{"preceding", w.preceding}, {"proceeding", w.proceeding}}; }
WindowConfig window_from_json(const json& j) {
  return {j.at("preceding").get<std::size_t>(), j.at("proceeding").get<std::size_t>()};
}

// First line: JSON header. Rest: backbone binary.
std::pair<json, std::unique_ptr<std::ifstream>> open_model_file(const std::filesystem::path& path) {
  auto in = std::make_unique<std::ifstream>(path, std::ios::binary);
  if (!*in) throw Error("cannot open model file " + path.string());
  std::string header;
  std::getline(*in, header);
  try {
    return {json::parse(header), std::move(in)};
  } catch (const json::exception& e) {
    throw ParseError("bad model header in " + path.string() + ": " + e.what());
  }
}

std::ofstream create_model_file(const std::filesystem::path& path, const json& header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file " + path.string());
  out << header.dump() << '\n';
  return out;
}

}  // namespace

// --- encoder head ---------------------------------------------------------------

EncoderHeadClassifier::EncoderHeadClassifier(DeskEncoder encoder, LabelScheme scheme, WindowConfig window,
                                             std::uint64_t seed)
    : encoder_(std::move(encoder)), scheme_(std::move(scheme)), window_(window) {
  const std::size_t d = encoder_.dim(), c = scheme_.class_count();
  if (c == 0) throw ValidationError("scheme without classes");
  weight_.resize(c, d);
  bias_.resize(c, 1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-bound, bound);
  for (auto& w : weight_.value) w = U(rng);
  for (auto& b : bias_.value) b = U(rng);
}

std::vector<double> EncoderHeadClassifier::logits(const EmbeddingSequence& seq) const {
  const auto pooled = mean_pool_target(seq, seq.target_span());
  std::vector<double> z(scheme_.class_count());
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double* w = weight_.row(c);
    double acc = bias_.value[c];
    for (std::size_t j = 0; j < pooled.size(); ++j) acc += w[j] * pooled[j];
    z[c] = acc;
  }
  return z;
}

std::vector<double> EncoderHeadClassifier::logits(const Dialogue& d, std::size_t utterance_index) const {
  return logits(encode_window(encoder_, build_window(d, utterance_index, window_)));
}

std::size_t EncoderHeadClassifier::predict(const Dialogue& d, std::size_t utterance_index) const {
  return rank_classify({logits(d, utterance_index)}, scheme_);
}

void EncoderHeadClassifier::backward(const EmbeddingSequence& seq, std::span<const double> dlogits) {
  const auto pooled = mean_pool_target(seq, seq.target_span());
  std::vector<double> dpooled(pooled.size(), 0.0);
  for (std::size_t c = 0; c < dlogits.size(); ++c) {
    const double g = dlogits[c];
    bias_.grad[c] += g;
    double* gw = weight_.grad_row(c);
    const double* w = weight_.row(c);
    for (std::size_t j = 0; j < pooled.size(); ++j) {
      gw[j] += g * pooled[j];
      dpooled[j] += g * w[j];
    }
  }
  encoder_.backprop_mean(seq, seq.target_span(), dpooled);
}

std::vector<ParamBlock*> EncoderHeadClassifier::parameters() {
  auto p = encoder_.parameters();
  p.push_back(&weight_);
  p.push_back(&bias_);
  return p;
}

void EncoderHeadClassifier::save(const std::filesystem::path& path) const {
  const json header = {{"format", "empeval-encoder-head/1"},
                       {"scheme", to_json(scheme_)},
                       {"window", window_to_json(window_)},
                       {"head_weight", weight_.value},
                       {"head_bias", bias_.value}};
  auto out = create_model_file(path, header);
  encoder_.save(out);
  if (!out) throw Error("failed writing " + path.string());
}

EncoderHeadClassifier EncoderHeadClassifier::load(const std::filesystem::path& path) {
  auto [header, in] = open_model_file(path);
  try {
    if (header.at("format") != "empeval-encoder-head/1") throw ParseError("not an encoder-head model: " + path.string());
    EncoderHeadClassifier m(DeskEncoder::load(*in), label_scheme_from_json(header.at("scheme")),
                            window_from_json(header.at("window")), 0);
    m.weight_.value = header.at("head_weight").get<std::vector<double>>();
    m.bias_.value = header.at("head_bias").get<std::vector<double>>();
    if (m.weight_.value.size() != m.weight_.rows * m.weight_.cols || m.bias_.value.size() != m.bias_.rows)
      throw ParseError("head shape mismatch in " + path.string());
    return m;
  } catch (const json::exception& e) {
    throw ParseError("bad model header in " + path.string() + ": " + e.what());
  }
}

// --- seq2seq ---------------------------------------------------------------

Seq2SeqClassifier::Seq2SeqClassifier(DeskSeq2Seq model, InstructionTemplate tmpl, LabelScheme scheme,
                                     VerbalizerSet verbalizers, WindowConfig window, bool use_instructions)
    : model_(std::move(model)),
      template_(std::move(tmpl)),
      scheme_(std::move(scheme)),
      verbalizers_(std::move(verbalizers)),
      window_(window),
      use_instructions_(use_instructions) {
  validate_template(template_, scheme_);
  if (verbalizers_.tokens.size() != scheme_.class_count())
    throw ValidationError("verbalizer count does not match the classes of " + scheme_.task_id);
  model_.register_verbalizers(verbalizers_.tokens);
}

RenderedPrompt Seq2SeqClassifier::prompt_for(const Dialogue& d, std::size_t utterance_index) const {
  auto render = [&](const ContextWindow& w) {
    return render_instruction(template_, w, scheme_, verbalizers_, use_instructions_);
  };
  auto cost = [&](const ContextWindow& w) { return model_.count_tokens(render(w).text); };
  const auto w = fit_to_budget(build_window(d, utterance_index, window_), cost, model_.descriptor().token_budget);
  return render(w);
}

ClassScores Seq2SeqClassifier::scores(const Dialogue& d, std::size_t utterance_index) const {
  return score_verbalizers(model_, prompt_for(d, utterance_index));
}

std::size_t Seq2SeqClassifier::predict(const Dialogue& d, std::size_t utterance_index) const {
  return rank_classify(scores(d, utterance_index), scheme_);
}

void Seq2SeqClassifier::save(const std::filesystem::path& path) const {
  const json header = {{"format", "empeval-seq2seq/1"},
                       {"scheme", to_json(scheme_)},
                       {"template", template_to_json(template_)},
                       {"verbalizers", verbalizers_.tokens},
                       {"special_verbalizers", verbalizers_.special},
                       {"window", window_to_json(window_)},
                       {"use_instructions", use_instructions_}};
  auto out = create_model_file(path, header);
  model_.save(out);
  if (!out) throw Error("failed writing " + path.string());
}

Seq2SeqClassifier Seq2SeqClassifier::load(const std::filesystem::path& path) {
  auto [header, in] = open_model_file(path);
  try {
    if (header.at("format") != "empeval-seq2seq/1") throw ParseError("not a seq2seq model: " + path.string());
    VerbalizerSet v{header.at("verbalizers").get<std::vector<std::string>>(),
                    header.at("special_verbalizers").get<bool>()};
    return Seq2SeqClassifier(DeskSeq2Seq::load(*in), template_from_json(header.at("template")),
                             label_scheme_from_json(header.at("scheme")), std::move(v), window_from_json(header.at("window")),
                             header.at("use_instructions").get<bool>());
  } catch (const json::exception& e) {
    throw ParseError("bad model header in " + path.string() + ": " + e.what());
  }
}

// --- prediction ---------------------------------------------------------------

std::vector<PredictionRecord> predict_examples(const EncoderHeadClassifier& model, const DatasetManifest& manifest,
                                               const std::vector<LabeledExample>& examples, std::size_t fold) {
  std::vector<PredictionRecord> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    ClassScores s{model.logits(manifest.dialogue(e.dialogue_id), e.utterance_index)};
    const std::size_t pred = rank_classify(s, model.scheme());
    out.push_back({e.dialogue_id, e.utterance_index, e.task_id, fold, pred, std::move(s.log_likelihoods), true});
  }
  return out;
}

std::vector<PredictionRecord> predict_examples(const Seq2SeqClassifier& model, const DatasetManifest& manifest,
                                               const std::vector<LabeledExample>& examples, std::size_t fold) {
  std::vector<PredictionRecord> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    auto s = model.scores(manifest.dialogue(e.dialogue_id), e.utterance_index);
    const std::size_t pred = rank_classify(s, model.scheme());
    out.push_back({e.dialogue_id, e.utterance_index, e.task_id, fold, pred, std::move(s.log_likelihoods), true});
  }
  return out;
}

// --- training loop ---------------------------------------------------------------

namespace {

struct Splits {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> monitor;
};

Splits make_splits(const DatasetManifest& manifest, const LabelScheme& scheme, const FoldSplit& fold,
                   const TrainConfig& cfg) {
  const auto all = manifest.examples_for(scheme.task_id);
  Splits s;
  s.train = split_examples(all, fold, false);
  if (cfg.monitor == MonitorSplit::test) {
    s.monitor = split_examples(all, fold, true);
  } else {
    auto ids = fold.train_ids;
    seeded_shuffle(ids, cfg.seed ^ 0xdefaced5eedull);
    std::size_t n_dev = static_cast<std::size_t>(std::llround(cfg.dev_fraction * static_cast<double>(ids.size())));
    n_dev = std::clamp<std::size_t>(n_dev, 1, ids.size() > 1 ? ids.size() - 1 : 1);
    std::set<std::string> dev(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_dev, ids.size())));
    std::vector<LabeledExample> train;
    for (auto& e : s.train) (dev.count(e.dialogue_id) ? s.monitor : train).push_back(e);
    s.train = std::move(train);
  }
  if (s.train.empty())
    throw ValidationError("fold " + std::to_string(fold.fold_index) + " has no training examples for " + scheme.task_id);
  if (s.monitor.empty())
    throw ValidationError("fold " + std::to_string(fold.fold_index) + " has no monitoring examples for " +
                          scheme.task_id);

  std::vector<std::size_t> counts(scheme.class_count(), 0);
  for (const auto& e : s.train) ++counts[e.gold_class];
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      spdlog::warn("class '{}' of {} is absent from the training split of fold {}", scheme.classes[c], scheme.task_id,
                   fold.fold_index);
  return s;
}

std::vector<double> margins_for(const TrainConfig& cfg, const LabelScheme& scheme,
                                const std::vector<LabeledExample>& train) {
  if (cfg.loss != LossKind::ldam) return std::vector<double>(scheme.class_count(), 0.0);
  LdamConfig l;
  l.class_counts.assign(scheme.class_count(), 0);
  for (const auto& e : train) ++l.class_counts[e.gold_class];
  for (auto& n : l.class_counts) n = std::max<std::size_t>(n, 1);  // absent class gets the largest margin
  l.max_margin = cfg.ldam_max_margin;
  l.scale = cfg.ldam_scale;
  return ldam_margins(l);
}

double macro_f1_of(const std::vector<PredictionRecord>& preds, const std::vector<LabeledExample>& gold,
                   std::size_t classes) {
  return metrics_from_confusion(confusion(preds, gold, classes)).macro_f1;
}

void write_epoch_metrics(const TrainConfig& cfg, std::size_t epoch, double metric, double loss, bool improved) {
  if (!cfg.checkpoint_dir) return;
  const json j = {{"epoch", epoch},
                  {"macro_f1", metric},
                  {"train_loss", loss},
                  {"improved", improved},
                  {"monitor", cfg.monitor == MonitorSplit::test ? "test" : "dev"}};
  write_file(*cfg.checkpoint_dir / ("epoch-" + std::to_string(epoch)) / "metrics.json", j.dump(2) + "\n");
}

// Shared epoch loop. `run_epoch` returns the mean training loss, `evaluate`
// the monitored macro-F1, `save` writes the current parameters to a path.
template <typename Model, typename RunEpoch, typename Evaluate>
TrainingHistory fit(Model& model, const TrainConfig& cfg, RunEpoch run_epoch, Evaluate evaluate) {
  TrainingHistory h;
  std::optional<Model> best;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double loss = run_epoch(epoch);
    const double metric = evaluate();
    h.train_loss.push_back(loss);
    h.monitored.push_back(metric);
    const bool improved = !h.best || metric > h.best->metric;
    if (improved) {
      best = model;
      Checkpoint cp{epoch, metric, std::nullopt};
      if (cfg.checkpoint_dir) {
        if (h.best && h.best->params_path) std::filesystem::remove(*h.best->params_path);
        cp.params_path = *cfg.checkpoint_dir / ("epoch-" + std::to_string(epoch)) / "model.bin";
        model.save(*cp.params_path);
      }
      h.best = cp;
    }
    write_epoch_metrics(cfg, epoch, metric, loss, improved);
    spdlog::debug("epoch {} loss {:.5f} macro-F1 {:.4f}", epoch, loss, metric);
    if (early_stop_check(h.monitored, cfg.patience) == StopDecision::stop) {
      h.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  if (best) model = std::move(*best);
  if (cfg.checkpoint_dir && h.best) {
    const json j = {{"best_epoch", h.best->epoch},
                    {"macro_f1", h.best->metric},
                    {"epochs_run", h.monitored.size()},
                    {"stopped_early", h.stopped_early},
                    {"history", h.monitored}};
    write_file(*cfg.checkpoint_dir / "best.json", j.dump(2) + "\n");
  }
  return h;
}

}  // namespace

TrainResult<EncoderHeadClassifier> train_encoder_head(const DatasetManifest& manifest, const LabelScheme& scheme,
                                                      const FoldSplit& fold, const TrainConfig& cfg,
                                                      const DeskEncoderConfig& backbone) {
  validate(cfg);
  const auto splits = make_splits(manifest, scheme, fold, cfg);
  const auto margins = margins_for(cfg, scheme, splits.train);

  DeskEncoderConfig bcfg = backbone;
  bcfg.seed = backbone.seed ^ cfg.seed;
  EncoderHeadClassifier model(DeskEncoder(bcfg), scheme, cfg.window, cfg.seed);

  // token ids and spans do not change during training; values are refreshed
  std::vector<EmbeddingSequence> inputs;
  inputs.reserve(splits.train.size());
  for (const auto& e : splits.train)
    inputs.push_back(encode_window(model.encoder(), build_window(manifest.dialogue(e.dialogue_id), e.utterance_index,
                                                                 cfg.window)));

  AdamW opt({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  auto params = model.parameters();
  std::vector<std::size_t> order(inputs.size());

  auto run_epoch = [&](std::size_t epoch) {
    std::iota(order.begin(), order.end(), 0);
    seeded_shuffle(order, cfg.seed * 1000003ull + epoch);
    const double scale = 1.0 / static_cast<double>(cfg.batch_size * cfg.grad_accumulation);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) {
        auto& seq = inputs[order[i]];
        model.encoder().refresh(seq);
        const auto z = model.logits(seq);
        auto r = apply_loss(cfg, z, splits.train[order[i]].gold_class, margins);
        total += r.value;
        for (auto& g : r.gradient) g *= scale;
        model.backward(seq, r.gradient);
      }
      if (++batches % cfg.grad_accumulation == 0 || end == order.size()) opt.step(params);
    }
    return total / static_cast<double>(order.size());
  };
  auto evaluate = [&] {
    return macro_f1_of(predict_examples(model, manifest, splits.monitor, fold.fold_index), splits.monitor,
                       scheme.class_count());
  };
  auto history = fit(model, cfg, run_epoch, evaluate);
  return {std::move(model), std::move(history)};
}

TrainResult<Seq2SeqClassifier> train_seq2seq_instruction(const DatasetManifest& manifest, const LabelScheme& scheme,
                                                         const FoldSplit& fold, const TrainConfig& cfg,
                                                         const InstructionTemplate& tmpl,
                                                         const DeskSeq2SeqConfig& backbone) {
  validate(cfg);
  const auto splits = make_splits(manifest, scheme, fold, cfg);
  const auto margins = margins_for(cfg, scheme, splits.train);

  DeskSeq2SeqConfig bcfg = backbone;
  bcfg.seed = backbone.seed ^ cfg.seed;
  Seq2SeqClassifier model(DeskSeq2Seq(bcfg), tmpl, scheme, finetuning_verbalizers(scheme), cfg.window,
                          cfg.use_instructions);

  std::vector<PromptFeatures> inputs;
  inputs.reserve(splits.train.size());
  for (const auto& e : splits.train)
    inputs.push_back(model.model().features(model.prompt_for(manifest.dialogue(e.dialogue_id), e.utterance_index)));

  AdamW opt({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  auto params = model.model().parameters();
  std::vector<std::size_t> order(inputs.size());

  auto run_epoch = [&](std::size_t epoch) {
    std::iota(order.begin(), order.end(), 0);
    seeded_shuffle(order, cfg.seed * 1000003ull + epoch);
    const double scale = 1.0 / static_cast<double>(cfg.batch_size * cfg.grad_accumulation);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) {
        const auto& f = inputs[order[i]];
        const std::size_t gold = splits.train[order[i]].gold_class;
        const auto s = model.model().score(f);
        std::vector<double> dscores(s.log_likelihoods.size(), 0.0);
        if (cfg.loss == LossKind::cross_entropy) {
          // generation NLL of the gold verbalizer
          total += -s.log_likelihoods[gold];
          dscores[gold] = -1.0;
        } else {
          const auto r = apply_loss(cfg, s.log_likelihoods, gold, margins);
          total += r.value;
          dscores = r.gradient;
        }
        for (auto& g : dscores) g *= scale;
        model.model().backward(f, dscores);
      }
      if (++batches % cfg.grad_accumulation == 0 || end == order.size()) opt.step(params);
    }
    return total / static_cast<double>(order.size());
  };
  auto evaluate = [&] {
    return macro_f1_of(predict_examples(model, manifest, splits.monitor, fold.fold_index), splits.monitor,
                       scheme.class_count());
  };
  auto history = fit(model, cfg, run_epoch, evaluate);
  return {std::move(model), std::move(history)};
}

}  // namespace empeval
