#include "empeval/cli.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "empeval/error.hpp"
#include "empeval/remote.hpp"
#include "empeval/util.hpp"

namespace empeval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Upstream output of an earlier command is missing.
class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(const fs::path& p, const std::string& hint)
      : Error("missing " + p.string() + " (" + hint + ")") {}
};

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw MissingArtifact(p, hint);
}

void refuse_overwrite(const fs::path& p, const CommandOptions& opts) {
  if (fs::exists(p) && !opts.force)
    throw ValidationError(p.string() + " already exists; pass --force to overwrite");
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

const std::set<std::string> kBuiltinTemplateSets = {"emh", "esconv", "empeval"};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename F>
void run_jobs(std::size_t n, std::size_t workers, F job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;  // stop handing out work
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

// --- spec ---------------------------------------------------------------

std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::encoder_head: return "encoder_head";
    case ModelFamily::seq2seq_ift: return "seq2seq_ift";
    case ModelFamily::prompt_zero: return "prompt_zero";
    case ModelFamily::prompt_fewshot: return "prompt_fewshot";
  }
  return "encoder_head";
}

ModelFamily model_family_from_string(std::string_view s) {
  const std::string k = to_lower_ascii(s);
  if (k == "encoder_head") return ModelFamily::encoder_head;
  if (k == "seq2seq_ift") return ModelFamily::seq2seq_ift;
  if (k == "prompt_zero") return ModelFamily::prompt_zero;
  if (k == "prompt_fewshot") return ModelFamily::prompt_fewshot;
  throw ValidationError("unknown model family '" + std::string(s) +
                        "' (expected encoder_head, seq2seq_ift, prompt_zero or prompt_fewshot)");
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ValidationError("unknown key '" + k + "' in " + where);
}

BackendSpec parse_backend(const json& j, const fs::path& base) {
  check_keys(j,
             {"name", "dim", "buckets", "token_budget", "model_path", "base_url", "endpoint", "api_key_env", "model",
              "temperature", "max_tokens", "requests_per_interval", "rate_interval_ms", "timeout_ms", "max_retries",
              "initial_backoff_ms"},
             "backend");
  BackendSpec b;
  b.name = j.at("name").get<std::string>();
  b.dim = j.value("dim", b.dim);
  b.buckets = j.value("buckets", b.buckets);
  b.token_budget = j.value("token_budget", b.token_budget);
  if (j.contains("model_path")) b.model_path = resolve(base, j.at("model_path").get<std::string>());
  b.base_url = j.value("base_url", b.base_url);
  b.endpoint = j.value("endpoint", b.endpoint);
  b.api_key_env = j.value("api_key_env", b.api_key_env);
  b.model = j.value("model", b.model);
  b.temperature = j.value("temperature", b.temperature);
  b.max_tokens = j.value("max_tokens", b.max_tokens);
  b.requests_per_interval = j.value("requests_per_interval", b.requests_per_interval);
  b.rate_interval_ms = j.value("rate_interval_ms", b.rate_interval_ms);
  b.timeout_ms = j.value("timeout_ms", b.timeout_ms);
  b.max_retries = j.value("max_retries", b.max_retries);
  b.initial_backoff_ms = j.value("initial_backoff_ms", b.initial_backoff_ms);
  if (b.name != "desk-encoder" && b.name != "desk-seq2seq" && b.name != "remote")
    throw ValidationError("unknown backend '" + b.name + "' (expected desk-encoder, desk-seq2seq or remote)");
  if (b.name == "remote" && b.base_url.empty()) throw ValidationError("remote backend needs base_url");
  if (b.dim == 0 || b.buckets == 0 || b.token_budget == 0) throw ValidationError("backend sizes must be positive");
  return b;
}

}  // namespace

RunSpec parse_run_spec(const json& j, const fs::path& base) {
  RunSpec s;
  s.raw = j;
  try {
    check_keys(j,
               {"run_id", "dataset", "tasks", "family", "backend", "train", "window", "folds", "seed", "output_dir",
                "aggregation", "analysis", "report"},
               "run spec");
    s.run_id = j.at("run_id").get<std::string>();
    if (s.run_id.empty() || s.run_id.find_first_of("/\\") != std::string::npos || s.run_id == "." || s.run_id == "..")
      throw ValidationError("run_id must be a plain directory name");

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, {"kind", "path", "labels", "annotations", "schemes", "templates"}, "dataset");
      s.dataset.kind = d.at("kind").get<std::string>();
      if (s.dataset.kind != "emh" && s.dataset.kind != "esconv" && s.dataset.kind != "jsonl")
        throw ValidationError("dataset kind must be emh, esconv or jsonl");
      s.dataset.path = resolve(base, d.at("path").get<std::string>());
      if (d.contains("labels")) s.dataset.labels = resolve(base, d.at("labels").get<std::string>());
      if (d.contains("annotations")) s.dataset.annotations = resolve(base, d.at("annotations").get<std::string>());
      s.dataset.schemes = d.value("schemes", s.dataset.kind == "jsonl" ? std::string("empeval") : s.dataset.kind);
      if (!kBuiltinTemplateSets.count(s.dataset.schemes))
        throw ValidationError("dataset schemes must be emh, esconv or empeval");
      const std::string t = d.value("templates", s.dataset.kind == "jsonl" ? s.dataset.schemes : s.dataset.kind);
      s.dataset.templates = kBuiltinTemplateSets.count(t) ? t : resolve(base, t).string();
      if (s.dataset.kind == "jsonl" && s.dataset.labels && s.dataset.annotations)
        throw ValidationError("a jsonl dataset takes either labels or annotations, not both");
    }

    if (j.contains("tasks")) s.tasks = j.at("tasks").get<std::vector<std::string>>();
    if (j.contains("family")) s.family = model_family_from_string(j.at("family").get<std::string>());

    if (j.contains("backend")) {
      s.backend = parse_backend(j.at("backend"), base);
    } else if (is_prompting(s.family)) {
      s.backend.name = "desk-seq2seq";
    } else {
      s.backend.name = s.family == ModelFamily::encoder_head ? "desk-encoder" : "desk-seq2seq";
    }
    const auto& bn = s.backend.name;
    if (s.family == ModelFamily::encoder_head && bn != "desk-encoder")
      throw ValidationError("encoder_head needs an embedding backend (desk-encoder), got " + bn);
    if (s.family == ModelFamily::seq2seq_ift && bn != "desk-seq2seq")
      throw ValidationError("seq2seq_ift needs a trainable sequence scorer (desk-seq2seq), got " + bn);
    if (is_prompting(s.family) && bn == "desk-encoder")
      throw ValidationError("prompting needs a scoring or generating backend, got " + bn);

    if (j.contains("train")) {
      if (is_prompting(s.family)) throw ValidationError("prompting families take no train block");
      s.has_train_block = true;
      s.train = train_config_from_json(j.at("train"));
    }
    if (j.contains("window")) {
      const auto& w = j.at("window");
      check_keys(w, {"preceding", "proceeding"}, "window");
      s.window.preceding = w.value("preceding", s.window.preceding);
      s.window.proceeding = w.value("proceeding", s.window.proceeding);
    } else {
      s.window = s.train.window;
    }
    s.train.window = s.window;
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    else s.seed = s.train.seed;
    s.train.seed = s.seed;

    if (j.contains("folds")) s.folds = j.at("folds").get<std::size_t>();
    if (s.folds < 2) throw ValidationError("folds must be at least 2");
    s.output_dir = resolve(base, j.value("output_dir", std::string("runs")));
    if (j.contains("aggregation")) s.aggregation = fold_aggregation_from_string(j.at("aggregation").get<std::string>());

    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      check_keys(a, {"annotations", "test", "threshold", "intents", "dimensions"}, "analysis");
      if (a.contains("annotations")) s.analysis.annotations = resolve(base, a.at("annotations").get<std::string>());
      if (a.contains("test")) s.analysis.test = significance_test_from_string(a.at("test").get<std::string>());
      s.analysis.threshold = a.value("threshold", s.analysis.threshold);
      if (a.contains("intents")) s.analysis.intents = a.at("intents").get<std::vector<std::string>>();
      if (a.contains("dimensions")) s.analysis.dimensions = a.at("dimensions").get<std::vector<std::string>>();
    }
    if (j.contains("report")) {
      const auto& r = j.at("report");
      check_keys(r, {"runs", "output"}, "report");
      for (const auto& p : r.at("runs").get<std::vector<std::string>>()) s.report.runs.push_back(resolve(base, p));
      if (r.contains("output")) s.report.output = resolve(base, r.at("output").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed run spec: ") + e.what());
  }
  return s;
}

RunSpec load_run_spec(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_run_spec(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

// --- dataset ---------------------------------------------------------------

namespace {

std::vector<LabelScheme> catalog(const std::string& name) {
  if (name == "emh") return emh_schemes();
  if (name == "esconv") return esconv_schemes();
  return empeval_schemes();
}

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Disagreement> disagreements;
};

LoadedDataset load_dataset_full(const RunSpec& spec) {
  const auto& d = spec.dataset;
  if (d.kind.empty()) throw ValidationError("run spec has no dataset");
  if (!fs::exists(d.path)) throw ValidationError("dataset path not found: " + d.path.string());
  if (d.kind == "emh") return {load_emh(d.path), {}};
  if (d.kind == "esconv") return {load_esconv(d.path), {}};
  auto dialogues = load_jsonl_corpus(d.path);
  if (d.annotations) {
    auto c = build_annotated_corpus(std::move(dialogues), parse_annotations_csv(read_file(*d.annotations)),
                                    catalog(d.schemes));
    return {std::move(c.manifest), std::move(c.disagreements)};
  }
  if (!d.labels) throw ValidationError("a jsonl dataset needs labels or annotations");
  return {attach_labels(std::move(dialogues), catalog(d.schemes), parse_labeled_examples_csv(read_file(*d.labels))),
          {}};
}

fs::path template_dir(const RunSpec& spec) {
  return kBuiltinTemplateSets.count(spec.dataset.templates) ? builtin_template_dir(spec.dataset.templates)
                                                            : fs::path(spec.dataset.templates);
}

json input_hashes(const RunSpec& spec) {
  json out = json::object();
  auto add_file = [&](const fs::path& p) {
    if (fs::is_regular_file(p)) out[p.string()] = git_blob_hash(read_file(p));
  };
  auto add_dir = [&](const fs::path& dir) {
    if (!fs::is_directory(dir)) return;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add_file(f);
  };
  if (!spec.dataset.kind.empty()) {
    if (fs::is_directory(spec.dataset.path)) add_dir(spec.dataset.path);
    else add_file(spec.dataset.path);
    if (spec.dataset.labels) add_file(*spec.dataset.labels);
    if (spec.dataset.annotations) add_file(*spec.dataset.annotations);
    if (spec.family == ModelFamily::seq2seq_ift || is_prompting(spec.family)) add_dir(template_dir(spec));
  }
  if (spec.analysis.annotations) add_file(*spec.analysis.annotations);
  return out;
}

void write_run_header(const RunSpec& spec, const fs::path& dir) {
  write_json(dir / "spec.json", spec.raw);
  write_json(dir / "inputs.json", input_hashes(spec));
}

std::map<std::string, InstructionTemplate> templates_for(const RunSpec& spec, const std::vector<LabelScheme>& schemes) {
  auto all = load_template_dir(template_dir(spec));
  std::map<std::string, InstructionTemplate> out;
  for (const auto& s : schemes) {
    auto it = all.find(s.task_id);
    if (it == all.end())
      throw ValidationError("no instruction template for task " + s.task_id + " in " + template_dir(spec).string());
    validate_template(it->second, s);
    out.emplace(s.task_id, it->second);
  }
  return out;
}

struct Prepared {
  DatasetManifest manifest;
  std::vector<LabelScheme> schemes;  // selected tasks
  std::vector<FoldSplit> folds;
};

Prepared load_prepared(const RunSpec& spec) {
  const fs::path dir = spec.run_dir();
  const std::string hint = "run `empeval prepare` with this spec first";
  for (const char* f : {"dataset.json", "manifest.jsonl", "schemes.json", "examples.csv", "folds.json"})
    require_file(dir / f, hint);
  Prepared p;
  std::vector<LabelScheme> schemes;
  for (const auto& s : read_json(dir / "schemes.json")) schemes.push_back(label_scheme_from_json(s));
  const auto name = read_json(dir / "dataset.json").value("name", spec.run_id);
  p.manifest = attach_labels(parse_jsonl_corpus(read_file(dir / "manifest.jsonl"), name), schemes,
                             parse_labeled_examples_csv(read_file(dir / "examples.csv")));
  p.schemes = schemes;
  p.folds = folds_from_json(read_file(dir / "folds.json"));
  if (p.folds.size() != spec.folds)
    throw ValidationError("prepared run has " + std::to_string(p.folds.size()) + " folds, spec asks for " +
                          std::to_string(spec.folds) + "; rerun prepare with --force");
  return p;
}

fs::path job_dir(const RunSpec& spec, const std::string& task, std::size_t fold) {
  return spec.run_dir() / task / ("fold-" + std::to_string(fold));
}

std::size_t majority_class(const std::vector<LabeledExample>& train, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& e : train) ++counts[e.gold_class];
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

TaskSuiteReport evaluate_run(const RunSpec& spec, const Prepared& p, bool prompting) {
  std::vector<TaskReport> reports;
  std::vector<PredictionRecord> all;
  const std::string hint = prompting ? "run `empeval prompt-eval` first" : "run `empeval train` first";
  for (const auto& s : p.schemes) {
    std::vector<PredictionRecord> preds;
    for (const auto& f : p.folds) {
      const fs::path file = job_dir(spec, s.task_id, f.fold_index) / "predictions.csv";
      require_file(file, hint);
      auto part = parse_predictions_csv(read_file(file));
      preds.insert(preds.end(), part.begin(), part.end());
    }
    reports.push_back(evaluate_task(s.task_id, preds, p.manifest.examples_for(s.task_id), s.class_count(),
                                    spec.aggregation));
    all.insert(all.end(), preds.begin(), preds.end());
  }
  auto suite = suite_mean(std::move(reports));
  json report = {{"run_id", spec.run_id},
                 {"dataset", p.manifest.name},
                 {"family", to_string(spec.family)},
                 {"backend", spec.backend.name},
                 {"aggregation", to_string(spec.aggregation)},
                 {"suite", to_json(suite)},
                 {"spec", spec.raw}};
  write_json(spec.run_dir() / "report.json", report);
  write_file(spec.run_dir() / "predictions.csv", predictions_to_csv(all));
  return suite;
}

}  // namespace

DatasetManifest load_dataset(const RunSpec& spec) { return load_dataset_full(spec).manifest; }

std::vector<LabelScheme> selected_schemes(const RunSpec& spec, const DatasetManifest& m) {
  if (spec.tasks.empty()) return m.schemes;
  std::vector<LabelScheme> out;
  for (const auto& s : m.schemes)
    if (std::find(spec.tasks.begin(), spec.tasks.end(), s.task_id) != spec.tasks.end()) out.push_back(s);
  for (const auto& t : spec.tasks)
    if (!m.find_scheme(t)) throw ValidationError("dataset " + m.name + " has no task " + t);
  return out;
}

// --- commands ---------------------------------------------------------------

void cmd_prepare(const RunSpec& spec, const CommandOptions& opts) {
  const fs::path dir = spec.run_dir();
  refuse_overwrite(dir / "manifest.jsonl", opts);
  auto loaded = load_dataset_full(spec);
  auto& m = loaded.manifest;
  const auto schemes = selected_schemes(spec, m);
  if (spec.family == ModelFamily::seq2seq_ift || is_prompting(spec.family)) templates_for(spec, schemes);
  const auto folds = make_folds(m, spec.folds, spec.seed);

  if (opts.force) {
    for (const char* f : {"tasks", "folds"}) fs::remove_all(dir / f);
  }
  fs::create_directories(dir);
  write_run_header(spec, dir);
  write_file(dir / "manifest.jsonl", to_jsonl(m.dialogues));
  write_json(dir / "dataset.json", {{"name", m.name}, {"kind", spec.dataset.kind}, {"dialogues", m.dialogues.size()}});
  json sj = json::array();
  for (const auto& s : schemes) sj.push_back(to_json(s));
  write_json(dir / "schemes.json", sj);

  std::vector<LabeledExample> selected;
  json distribution = json::object();
  for (const auto& s : schemes) {
    const auto ex = m.examples_for(s.task_id);
    selected.insert(selected.end(), ex.begin(), ex.end());
    write_file(dir / "tasks" / (s.task_id + ".csv"), to_labeled_examples_csv(ex));
    const auto counts = compute_label_distribution(m, s.task_id);
    json row = json::object();
    for (std::size_t c = 0; c < counts.size(); ++c) row[s.classes[c]] = counts[c];
    distribution[s.task_id] = row;
  }
  write_file(dir / "examples.csv", to_labeled_examples_csv(selected));
  write_file(dir / "folds.json", folds_to_json(folds));
  for (const auto& f : folds)
    write_json(dir / "folds" / ("fold-" + std::to_string(f.fold_index) + ".json"),
               {{"fold", f.fold_index}, {"train", f.train_ids}, {"test", f.test_ids}});
  write_json(dir / "label_distribution.json", distribution);
  if (!loaded.disagreements.empty()) {
    std::string csv = "dialogue_id,utterance_index,task_id\n";
    for (const auto& d : loaded.disagreements)
      csv += csv_line({d.dialogue_id, std::to_string(d.utterance_index), d.task_id});
    write_file(dir / "disagreements.csv", csv);
  }
  spdlog::info("prepared {}: {} dialogues, {} tasks, {} folds", spec.run_id, m.dialogues.size(), schemes.size(),
               folds.size());
}

void cmd_train(const RunSpec& spec, const CommandOptions& opts) {
  if (is_prompting(spec.family)) throw ValidationError("prompting families are evaluated with prompt-eval, not train");
  const auto p = load_prepared(spec);
  std::map<std::string, InstructionTemplate> templates;
  if (spec.family == ModelFamily::seq2seq_ift) templates = templates_for(spec, p.schemes);

  struct Job {
    const LabelScheme* scheme;
    const FoldSplit* fold;
  };
  std::vector<Job> jobs;
  for (const auto& s : p.schemes)
    for (const auto& f : p.folds) {
      refuse_overwrite(job_dir(spec, s.task_id, f.fold_index) / "model.bin", opts);
      jobs.push_back({&s, &f});
    }
  write_run_header(spec, spec.run_dir());

  run_jobs(jobs.size(), opts.workers, [&](std::size_t i) {
    const auto& [scheme, fold] = jobs[i];
    const fs::path dir = job_dir(spec, scheme->task_id, fold->fold_index);
    fs::remove_all(dir);
    TrainConfig cfg = spec.train;
    cfg.checkpoint_dir = dir;
    const auto test = split_examples(p.manifest.examples_for(scheme->task_id), *fold, true);
    std::vector<PredictionRecord> preds;
    TrainingHistory history;
    if (spec.family == ModelFamily::encoder_head) {
      DeskEncoderConfig b{spec.backend.buckets, spec.backend.dim, spec.backend.token_budget, 0.1, 0};
      auto r = train_encoder_head(p.manifest, *scheme, *fold, cfg, b);
      r.model.save(dir / "model.bin");
      preds = predict_examples(r.model, p.manifest, test, fold->fold_index);
      history = std::move(r.history);
    } else {
      DeskSeq2SeqConfig b{spec.backend.buckets, spec.backend.dim, spec.backend.token_budget, 0.1, 0};
      auto r = train_seq2seq_instruction(p.manifest, *scheme, *fold, cfg, templates.at(scheme->task_id), b);
      r.model.save(dir / "model.bin");
      preds = predict_examples(r.model, p.manifest, test, fold->fold_index);
      history = std::move(r.history);
    }
    write_file(dir / "predictions.csv", predictions_to_csv(preds));
    write_json(dir / "history.json", {{"monitored_macro_f1", history.monitored},
                                      {"train_loss", history.train_loss},
                                      {"best_epoch", history.best ? history.best->epoch : 0},
                                      {"stopped_early", history.stopped_early}});
    spdlog::info("trained {} fold {}: best macro-F1 {:.4f} at epoch {}", scheme->task_id, fold->fold_index,
                 history.best ? history.best->metric : 0.0, history.best ? history.best->epoch : 0);
  });
}

TaskSuiteReport cmd_evaluate(const RunSpec& spec, const CommandOptions& opts) {
  refuse_overwrite(spec.run_dir() / "report.json", opts);
  const auto p = load_prepared(spec);
  const auto suite = evaluate_run(spec, p, is_prompting(spec.family));
  spdlog::info("{}: macro-F1 {:.4f}, accuracy {:.4f}", spec.run_id, suite.macro_f1, suite.accuracy);
  return suite;
}

TaskSuiteReport cmd_prompt_eval(const RunSpec& spec, const CommandOptions& opts) {
  if (!is_prompting(spec.family)) throw ValidationError("prompt-eval needs family prompt_zero or prompt_fewshot");
  const auto p = load_prepared(spec);
  const auto templates = templates_for(spec, p.schemes);
  const bool fewshot = spec.family == ModelFamily::prompt_fewshot;

  std::unique_ptr<HttpCompletionClient> remote;
  std::optional<DeskSeq2Seq> desk;
  if (spec.backend.name == "remote") {
    RemoteConfig rc;
    rc.base_url = spec.backend.base_url;
    rc.path = spec.backend.endpoint;
    rc.api_key_env = spec.backend.api_key_env;
    rc.retry.max_retries = spec.backend.max_retries;
    rc.retry.initial_backoff = std::chrono::milliseconds(spec.backend.initial_backoff_ms);
    rc.requests_per_interval = spec.backend.requests_per_interval;
    rc.rate_interval = std::chrono::milliseconds(spec.backend.rate_interval_ms);
    rc.timeout = std::chrono::milliseconds(spec.backend.timeout_ms);
    rc.request_log = spec.run_dir() / "requests.jsonl";
    rc.token_budget = spec.backend.token_budget;
    remote = std::make_unique<HttpCompletionClient>(rc);
  } else if (spec.backend.model_path) {
    require_file(*spec.backend.model_path, "backend.model_path must name a trained seq2seq model");
    desk = Seq2SeqClassifier::load(*spec.backend.model_path).model();
  } else {
    desk = DeskSeq2Seq({spec.backend.buckets, spec.backend.dim, spec.backend.token_budget, 0.1, spec.seed});
  }
  if (desk)
    for (const auto& s : p.schemes) desk->register_verbalizers(word_verbalizers(s).tokens);
  const HashingTokenizer counter;
  const std::size_t budget = remote ? remote->descriptor().token_budget : desk->descriptor().token_budget;
  const CompletionParams params{spec.backend.model, spec.backend.temperature, spec.backend.max_tokens};

  struct Job {
    const LabelScheme* scheme;
    const FoldSplit* fold;
  };
  std::vector<Job> jobs;
  for (const auto& s : p.schemes)
    for (const auto& f : p.folds) {
      refuse_overwrite(job_dir(spec, s.task_id, f.fold_index) / "predictions.csv", opts);
      jobs.push_back({&s, &f});
    }
  fs::create_directories(spec.run_dir());
  write_run_header(spec, spec.run_dir());

  run_jobs(jobs.size(), opts.workers, [&](std::size_t i) {
    const auto& scheme = *jobs[i].scheme;
    const auto& fold = *jobs[i].fold;
    const fs::path dir = job_dir(spec, scheme.task_id, fold.fold_index);
    fs::remove_all(dir);
    const auto& tmpl = templates.at(scheme.task_id);
    const auto verbalizers = word_verbalizers(scheme);
    const auto examples = p.manifest.examples_for(scheme.task_id);
    const auto train = split_examples(examples, fold, false);
    const auto test = split_examples(examples, fold, true);
    const std::size_t fallback = majority_class(train, scheme.class_count());
    const auto exemplars = fewshot ? select_exemplars(p.manifest, train, scheme, spec.window, verbalizers,
                                                      spec.seed + fold.fold_index)
                                   : std::vector<FewShotExemplar>{};
    auto render = [&](const ContextWindow& w) {
      return fewshot ? render_fewshot_prompt(tmpl, exemplars, w, scheme, verbalizers)
                     : render_instruction(tmpl, w, scheme, verbalizers);
    };
    auto cost = [&](const ContextWindow& w) {
      const auto text = render(w).text;
      return desk ? desk->count_tokens(text) : counter.pieces(text).size();
    };

    std::vector<PredictionRecord> preds;
    std::string log;
    for (const auto& e : test) {
      const auto w = fit_to_budget(build_window(p.manifest.dialogue(e.dialogue_id), e.utterance_index, spec.window),
                                   cost, budget);
      const auto prompt = render(w);
      PredictionRecord r{e.dialogue_id, e.utterance_index, e.task_id, fold.fold_index, fallback, {}, true};
      json entry = {{"dialogue_id", e.dialogue_id}, {"utterance_index", e.utterance_index}, {"prompt", prompt.text}};
      if (remote) {
        const std::string text = complete_remote(*remote, prompt.text, params);
        const auto parsed = parse_freeform_label(text, scheme);
        r.parsed = parsed.has_value();
        r.predicted_class = parsed.value_or(fallback);
        entry["response"] = text;
      } else {
        auto scores = score_verbalizers(*desk, prompt);
        r.predicted_class = rank_classify(scores, scheme);
        r.log_likelihoods = std::move(scores.log_likelihoods);
        entry["log_likelihoods"] = r.log_likelihoods;
      }
      entry["predicted_class"] = r.predicted_class;
      entry["parsed"] = r.parsed;
      log += entry.dump() + "\n";
      preds.push_back(std::move(r));
    }
    write_file(dir / "prompts.jsonl", log);
    write_file(dir / "predictions.csv", predictions_to_csv(preds));
  });

  const auto suite = evaluate_run(spec, p, true);
  spdlog::info("{}: macro-F1 {:.4f}, accuracy {:.4f}, {} unparsed answers", spec.run_id, suite.macro_f1,
               suite.accuracy, suite.parse_failures);
  return suite;
}

ConditionedTable cmd_analyze(const RunSpec& spec, const CommandOptions& opts) {
  const auto path = spec.analysis.annotations ? spec.analysis.annotations : spec.dataset.annotations;
  if (!path) throw ValidationError("analyze needs analysis.annotations (or dataset.annotations) in the run spec");
  require_file(*path, "annotation CSV named in the run spec");
  const fs::path dir = spec.run_dir() / "analysis";
  refuse_overwrite(dir / "table.csv", opts);

  const auto annotations = parse_annotations_csv(read_file(*path));
  std::vector<std::string> intents = spec.analysis.intents, dims = spec.analysis.dimensions;
  if (intents.empty() || dims.empty()) {
    for (const auto& s : empeval_schemes()) {
      if (is_likert_task(s.task_id)) {
        if (spec.analysis.dimensions.empty()) dims.push_back(s.task_id);
      } else if (spec.analysis.intents.empty()) {
        intents.push_back(s.task_id);
      }
    }
    if (spec.analysis.dimensions.empty()) dims.emplace_back(kSatisfactionTask);
  }
  const auto table = build_conditioned_table(annotations, intents, dims, spec.analysis.test);
  const auto agreement = agreement_report(annotations, spec.analysis.threshold);

  fs::create_directories(dir);
  write_run_header(spec, spec.run_dir());
  write_file(dir / "table.csv", table_to_csv(table));
  write_file(dir / "table.txt", table_to_grid(table));
  json tasks = json::array();
  for (const auto& t : agreement.tasks)
    tasks.push_back({{"task_id", t.task_id},
                     {"items", t.items},
                     {"agreement", t.agreement},
                     {"kappa", t.kappa.kappa},
                     {"kappa_degenerate", t.kappa.degenerate}});
  write_json(dir / "agreement.json", {{"tasks", tasks},
                                      {"mean_agreement", agreement.mean_agreement},
                                      {"mean_kappa", agreement.mean_kappa},
                                      {"threshold", spec.analysis.threshold},
                                      {"test", to_string(spec.analysis.test)}});
  spdlog::info("analysis written to {} (mean agreement {:.4f}, mean kappa {:.4f})", dir.string(),
               agreement.mean_agreement, agreement.mean_kappa);
  return table;
}

namespace {

struct ReportRow {
  std::string dataset, family, run_id;
  double precision, recall, f1, accuracy;
  std::size_t parse_failures;
};

std::string fmt4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Grouped bars: one group per run, four metrics per group.
std::string bar_plot_svg(const std::string& dataset, const std::vector<ReportRow>& rows) {
  static const char* kColors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52"};
  static const char* kNames[] = {"macro-P", "macro-R", "macro-F1", "accuracy"};
  const int bar = 16, gap = 28, left = 60, top = 40, plot_h = 220;
  const int group_w = 4 * bar + gap;
  const int width = left + static_cast<int>(rows.size()) * group_w + 140;
  const int height = top + plot_h + 120;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << xml_escape(dataset) << "</text>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = k / 5.0;
    const int y = top + plot_h - static_cast<int>(v * plot_h);
    s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - 140 << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt4(v).substr(0, 3)
      << "</text>\n";
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double vals[] = {rows[r].precision, rows[r].recall, rows[r].f1, rows[r].accuracy};
    const int x0 = left + 10 + static_cast<int>(r) * group_w;
    for (int m = 0; m < 4; ++m) {
      const int h = static_cast<int>(std::clamp(vals[m], 0.0, 1.0) * plot_h);
      s << "<rect x=\"" << x0 + m * bar << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar - 2 << "\" height=\""
        << h << "\" fill=\"" << kColors[m] << "\"><title>" << kNames[m] << " " << fmt4(vals[m])
        << "</title></rect>\n";
    }
    const int lx = x0 + 2 * bar, ly = top + plot_h + 12;
    s << "<text x=\"" << lx << "\" y=\"" << ly << "\" transform=\"rotate(35 " << lx << " " << ly << ")\">"
      << xml_escape(rows[r].family + " / " + rows[r].run_id) << "</text>\n";
  }
  for (int m = 0; m < 4; ++m) {
    const int y = top + 10 + m * 18, x = width - 125;
    s << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << kColors[m] << "\"/>\n";
    s << "<text x=\"" << x + 16 << "\" y=\"" << y << "\">" << kNames[m] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

int family_rank(const std::string& f) {
  static const std::vector<std::string> order = {"encoder_head", "seq2seq_ift", "prompt_zero", "prompt_fewshot"};
  const auto it = std::find(order.begin(), order.end(), f);
  return static_cast<int>(it - order.begin());
}

}  // namespace

void cmd_report(const RunSpec& spec, const CommandOptions& opts) {
  if (spec.report.runs.empty()) throw ValidationError("report needs report.runs in the run spec");
  const fs::path out = spec.report.output ? *spec.report.output : spec.run_dir() / "report";
  refuse_overwrite(out / "comparison.csv", opts);

  std::vector<ReportRow> rows;
  for (const auto& run : spec.report.runs) {
    const fs::path file = run / "report.json";
    require_file(file, "run `empeval evaluate` or `empeval prompt-eval` for that run first");
    const auto j = read_json(file);
    try {
      const auto suite = suite_from_json(j.at("suite"));
      rows.push_back({j.at("dataset").get<std::string>(), j.at("family").get<std::string>(),
                      j.at("run_id").get<std::string>(), suite.macro_precision, suite.macro_recall, suite.macro_f1,
                      suite.accuracy, suite.parse_failures});
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ": " + e.what());
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::make_tuple(a.dataset, family_rank(a.family), a.run_id) <
           std::make_tuple(b.dataset, family_rank(b.family), b.run_id);
  });

  std::string csv = "dataset,family,run_id,macro_precision,macro_recall,macro_f1,accuracy,parse_failures\n";
  std::map<std::string, std::vector<ReportRow>> by_dataset;
  for (const auto& r : rows) {
    csv += csv_line({r.dataset, r.family, r.run_id, fmt4(r.precision), fmt4(r.recall), fmt4(r.f1), fmt4(r.accuracy),
                     std::to_string(r.parse_failures)});
    by_dataset[r.dataset].push_back(r);
  }
  fs::create_directories(out);
  write_file(out / "comparison.csv", csv);
  for (const auto& [dataset, rs] : by_dataset) write_file(out / (dataset + ".svg"), bar_plot_svg(dataset, rs));
  spdlog::info("report with {} runs written to {}", rows.size(), out.string());
}

// --- entry point ---------------------------------------------------------------

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const TemplateError*>(&e) || dynamic_cast<const AggregationError*>(&e))
    return 1;
  return 2;
}

void write_error_report(const RunSpec& spec, const std::string& command, const std::exception& e, int code) {
  try {
    write_json(spec.run_dir() / "error.json",
               {{"command", command}, {"exit_code", code}, {"message", e.what()}, {"run_id", spec.run_id}});
  } catch (...) {
    // reporting must not mask the original failure
  }
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"empeval: empathy classification experiments"};
  app.require_subcommand(1);
  std::string spec_path;
  CommandOptions opts;
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"prepare", "validate the dataset and write manifest, task files and folds"},
      {"train", "train one classifier per (task, fold)"},
      {"evaluate", "aggregate fold predictions into a report"},
      {"prompt-eval", "evaluate a frozen model by zero- or few-shot prompting"},
      {"analyze", "intent-conditioned rating table and rater agreement"},
      {"report", "comparison table and bar plots over several runs"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--spec", spec_path, "run spec (JSON)")->required();
    sub->add_flag("--force", opts.force, "overwrite existing outputs");
    sub->add_option("--workers", opts.workers, "parallel (task, fold) jobs")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);
  const std::string command = app.get_subcommands().front()->get_name();

  std::optional<RunSpec> spec;
  try {
    spec = load_run_spec(spec_path);
    if (command == "prepare") cmd_prepare(*spec, opts);
    else if (command == "train") cmd_train(*spec, opts);
    else if (command == "evaluate") cmd_evaluate(*spec, opts);
    else if (command == "prompt-eval") cmd_prompt_eval(*spec, opts);
    else if (command == "analyze") cmd_analyze(*spec, opts);
    else cmd_report(*spec, opts);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    spdlog::error("{} failed: {}", command, e.what());
    if (spec) write_error_report(*spec, command, e, code);
    return code;
  }
  return 0;
}

}  // namespace empeval
