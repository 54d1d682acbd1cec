#pragma once

// Pipeline stages behind the command-line tool: transform, label, train,
// retrieve, eval, plus the labeling ablation. Each stage reads a single JSON
// config, writes its outputs atomically and orders them by question id.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "annotation.hpp"
#include "embedding.hpp"
#include "inference.hpp"
#include "line_graph.hpp"
#include "path_tools.hpp"
#include "retriever.hpp"
#include "http_client.hpp"

namespace rapl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExternalAnnotatorConfig {
  std::string base_url = "https://api.openai.com";
  std::string endpoint = "/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "RAPL_API_KEY";
  int timeout_seconds = 60;
};

struct PipelineConfig {
  std::filesystem::path train_questions;
  std::filesystem::path test_questions;
  std::filesystem::path embeddings;        // optional table; hash embeddings otherwise
  std::filesystem::path annotation_cache;  // default <output_dir>/annotations.jsonl
  std::filesystem::path transcript;        // optional prompt/response log
  std::filesystem::path output_dir = "out";
  std::string annotator = "mock";          // mock | external | shortest
  ExternalAnnotatorConfig external;
  std::size_t text_dim = 128;
  std::size_t candidate_cap = kDefaultCandidateCap;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = hardware concurrency
  TrainConfig train;
  InferenceConfig inference;

  std::filesystem::path output(const std::string& name) const { return output_dir / name; }
  std::filesystem::path cache_path() const {
    return annotation_cache.empty() ? output("annotations.jsonl") : annotation_cache;
  }
  std::filesystem::path checkpoint() const { return output("checkpoint.json"); }

  /// Copies the global seed into every stochastic component.
  void propagate_seed() {
    train.seed = seed;
    inference.seed = seed;
  }

  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    PipelineConfig c;
    auto path = [&](const nlohmann::json& obj, const char* key, std::filesystem::path& out) {
      if (!obj.contains(key) || obj.at(key).is_null()) return;
      std::filesystem::path p = obj.at(key).get<std::string>();
      out = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    try {
      auto paths = j.value("paths", nlohmann::json::object());
      path(paths, "train_questions", c.train_questions);
      path(paths, "test_questions", c.test_questions);
      path(paths, "embeddings", c.embeddings);
      path(paths, "annotation_cache", c.annotation_cache);
      path(paths, "transcript", c.transcript);
      if (paths.contains("output_dir")) path(paths, "output_dir", c.output_dir);
      else if (!base_dir.empty()) c.output_dir = base_dir / c.output_dir;

      c.annotator = j.value("annotator", c.annotator);
      c.text_dim = j.value("text_dim", c.text_dim);
      c.candidate_cap = j.value("candidate_cap", c.candidate_cap);
      c.seed = j.value("seed", c.seed);
      c.workers = j.value("workers", c.workers);

      auto ext = j.value("external", nlohmann::json::object());
      c.external.base_url = ext.value("base_url", c.external.base_url);
      c.external.endpoint = ext.value("endpoint", c.external.endpoint);
      c.external.model = ext.value("model", c.external.model);
      c.external.api_key_env = ext.value("api_key_env", c.external.api_key_env);
      c.external.timeout_seconds = ext.value("timeout_seconds", c.external.timeout_seconds);

      auto tr = j.value("train", nlohmann::json::object());
      c.train.epochs = tr.value("epochs", c.train.epochs);
      c.train.learning_rate = tr.value("learning_rate", c.train.learning_rate);
      c.train.batch_size = tr.value("batch_size", c.train.batch_size);
      c.train.dropout = tr.value("dropout", c.train.dropout);
      c.train.hidden_dim = tr.value("hidden_dim", c.train.hidden_dim);
      c.train.lambda_q = tr.value("lambda_q", c.train.lambda_q);
      c.train.lambda_path = tr.value("lambda_path", c.train.lambda_path);

      auto inf = j.value("inference", nlohmann::json::object());
      c.inference.K = inf.value("K", c.inference.K);
      c.inference.M = inf.value("M", c.inference.M);
      c.inference.rollouts_per_start = inf.value("rollouts_per_start", c.inference.rollouts_per_start);
      c.inference.max_hops = inf.value("max_hops", c.inference.max_hops);
      c.inference.dedup_before_truncate = inf.value("dedup_before_truncate", c.inference.dedup_before_truncate);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid config: ") + e.what());
    }
    c.propagate_seed();
    return c;
  }

  static PipelineConfig load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j, std::filesystem::absolute(file).parent_path());
  }

  void validate() const {
    if (annotator != "mock" && annotator != "external" && annotator != "shortest")
      throw ConfigError("annotator must be one of mock, external, shortest (got '" + annotator + "')");
    if (text_dim == 0) throw ConfigError("text_dim must be positive");
    if (train.epochs < 0 || train.batch_size == 0 || train.hidden_dim == 0)
      throw ConfigError("train needs epochs >= 0, batch_size >= 1, hidden_dim >= 1");
    if (train.dropout < 0.0 || train.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    try {
      inference.validate();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
  }
};

inline void require_file(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is not configured");
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

inline void write_lines_atomic(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + '\n';
  write_file_atomic(path, s);
}

inline void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + '\n');
}

// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `workers` threads; the exception of the
/// lowest failing index is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<QuestionInstance> load_sorted_questions(const std::filesystem::path& p) {
  auto qs = load_questions(p);
  std::sort(qs.begin(), qs.end(),
            [](const QuestionInstance& a, const QuestionInstance& b) { return a.question_id < b.question_id; });
  return qs;
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const PipelineConfig& cfg) {
  if (!cfg.embeddings.empty()) {
    require_file(cfg.embeddings, "embedding table");
    return std::make_unique<TableEmbedding>(TableEmbedding::load(cfg.embeddings));
  }
  return std::make_unique<HashEmbedding>(cfg.text_dim);
}

/// Client for rational-path selection; the shortest-path strategy has none.
inline std::unique_ptr<AnnotatorClient> make_client(const PipelineConfig& cfg) {
  if (cfg.annotator == "external") {
    HttpClientConfig h;
    h.base_url = cfg.external.base_url;
    h.endpoint = cfg.external.endpoint;
    h.model = cfg.external.model;
    h.timeout_seconds = cfg.external.timeout_seconds;
    h.api_key = api_key_from_env(cfg.external.api_key_env);
    return std::make_unique<HttpAnnotatorClient>(std::move(h));
  }
  return std::make_unique<MockAnnotatorClient>();
}

inline std::string label_annotator_id(const PipelineConfig& cfg, const AnnotatorClient& client) {
  return cfg.annotator == "shortest" ? std::string("shortest-path") : client.id();
}

// ---------------------------------------------------------------------------
// transform

inline nlohmann::json cmd_transform(const PipelineConfig& cfg) {
  struct Row {
    std::string split;
    const QuestionInstance* q;
    std::size_t nodes = 0, edges = 0, expected = 0;
    ValidationReport validation;
  };
  std::vector<QuestionInstance> train, test;
  if (!cfg.train_questions.empty()) {
    require_file(cfg.train_questions, "training questions");
    train = load_sorted_questions(cfg.train_questions);
  }
  if (!cfg.test_questions.empty()) {
    require_file(cfg.test_questions, "test questions");
    test = load_sorted_questions(cfg.test_questions);
  }
  std::vector<Row> rows;
  for (const auto& q : train) rows.push_back({"train", &q, 0, 0, 0, {}});
  for (const auto& q : test) rows.push_back({"test", &q, 0, 0, 0, {}});

  parallel_for(rows.size(), cfg.workers, [&](std::size_t i) {
    auto& r = rows[i];
    auto lg = build_line_graph(r.q->graph());
    r.nodes = lg.node_count();
    r.edges = lg.edge_count();
    r.expected = expected_line_graph_edges(r.q->graph());
    r.validation = validate_instance(*r.q);
  });

  nlohmann::json per = nlohmann::json::array();
  std::size_t nodes = 0, edges = 0, warnings = 0;
  for (const auto& r : rows) {
    if (r.nodes != r.q->graph().triple_count() || r.edges != r.expected)
      throw ValidationError("line-graph identity violated for question " + r.q->question_id);
    nodes += r.nodes;
    edges += r.edges;
    warnings += !r.validation.empty();
    per.push_back({{"question_id", r.q->question_id},
                   {"split", r.split},
                   {"triples", r.q->graph().triple_count()},
                   {"nodes", r.nodes},
                   {"edges", r.edges},
                   {"expected_edges", r.expected},
                   {"unlinked_question_entities", r.validation.unlinked_question_entities},
                   {"missing_answers", r.validation.missing_answers},
                   {"isolated_question_entities", r.validation.isolated_question_entities}});
  }
  nlohmann::json report{{"questions", rows.size()},
                        {"total_nodes", nodes},
                        {"total_edges", edges},
                        {"identity_ok", true},
                        {"questions_with_warnings", warnings},
                        {"per_question", std::move(per)}};
  std::filesystem::create_directories(cfg.output_dir);
  write_json_atomic(cfg.output("transform_report.json"), report);
  return report;
}

// ---------------------------------------------------------------------------
// label

/// Labels stored for one question, or nullopt if it was never labelled.
/// An empty stored selection resolves to the shortest-path fallback.
inline std::optional<std::vector<ReasoningPath>> cached_labels(const QuestionInstance& q,
                                                                const std::vector<ReasoningPath>& cands,
                                                                const AnnotationCache& cache,
                                                                const std::string& annotator_id) {
  auto rec = cache.get("rational", q.question_id, annotator_id);
  if (!rec) return std::nullopt;
  std::vector<std::string> serialized;
  for (const auto& p : cands) serialized.push_back(serialize_path(q.graph(), p));
  if (rec->candidates != serialized) return std::nullopt;
  auto labels = detail::pick(cands, rec->rational);
  if (labels.empty()) {
    std::set<ReasoningPath> allowed(cands.begin(), cands.end());
    for (auto& p : shortest_labels_for(q, kDefaultCandidateCap))
      if (allowed.count(p)) labels.push_back(std::move(p));
  }
  return labels;
}

inline std::set<RelationId> cached_target_relations(const QuestionInstance& q, const AnnotationCache& cache,
                                                    const std::string& annotator_id) {
  std::set<RelationId> out;
  if (auto rec = cache.get("relations", q.question_id, annotator_id))
    for (const auto& label : rec->relations)
      if (auto r = q.graph().find_relation(label)) out.insert(*r);
  return out;
}

inline nlohmann::json cmd_label(const PipelineConfig& cfg) {
  require_file(cfg.train_questions, "training questions");
  auto questions = load_sorted_questions(cfg.train_questions);
  std::filesystem::create_directories(cfg.output_dir);
  if (cfg.cache_path().has_parent_path()) std::filesystem::create_directories(cfg.cache_path().parent_path());
  AnnotationCache cache(cfg.cache_path());
  auto base = make_client(cfg);
  std::unique_ptr<AnnotatorClient> logged;
  if (!cfg.transcript.empty()) logged = std::make_unique<TranscriptClient>(*base, cfg.transcript);
  AnnotatorClient& client = logged ? *logged : *base;
  // Relation targeting always goes to a client; the shortest-path strategy
  // borrows the offline mock for it so both strategies share R_*.
  MockAnnotatorClient mock;
  std::unique_ptr<AnnotatorClient> logged_mock;
  if (!cfg.transcript.empty()) logged_mock = std::make_unique<TranscriptClient>(mock, cfg.transcript);
  AnnotatorClient& shortest_relations = logged_mock ? *logged_mock : static_cast<AnnotatorClient&>(mock);
  AnnotatorClient& relation_client = cfg.annotator == "shortest" ? shortest_relations : client;

  struct Row {
    std::size_t candidates = 0, labels = 0, relations = 0, client_calls = 0;
    bool truncated = false, unreachable = false, fallback = false, parse_failed = false;
    bool transport_failed = false, cache_hit = false;
  };
  std::vector<Row> rows(questions.size());
  parallel_for(questions.size(), cfg.workers, [&](std::size_t i) {
    const auto& q = questions[i];
    auto& r = rows[i];
    auto cands = candidate_paths_for(q, cfg.candidate_cap);
    r.candidates = cands.paths.size();
    r.truncated = cands.truncated;
    r.unreachable = cands.unreachable;
    if (r.unreachable) return;
    auto outcome = cfg.annotator == "shortest" ? annotate_shortest(q, cands.paths, cache)
                                               : annotate(client, q, cands.paths, cache);
    auto rel = target_relations(relation_client, q, cache);
    r.labels = outcome.labels.size();
    r.fallback = outcome.fallback;
    r.parse_failed = outcome.parse_failed;
    r.transport_failed = outcome.transport_failed;
    r.cache_hit = outcome.cache_hit;
    r.client_calls = outcome.client_calls + rel.client_calls;
    r.relations = rel.relations.size();
  });

  nlohmann::json per = nlohmann::json::array();
  std::size_t labelled = 0, fallbacks = 0, truncated = 0, parse_failures = 0, transport_failures = 0, calls = 0,
              hits = 0;
  std::vector<std::string> skipped;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& r = rows[i];
    truncated += r.truncated;
    calls += r.client_calls;
    if (r.unreachable) {
      skipped.push_back(questions[i].question_id);
    } else {
      labelled += r.labels > 0;
      fallbacks += r.fallback;
      parse_failures += r.parse_failed;
      transport_failures += r.transport_failed;
      hits += r.cache_hit;
    }
    per.push_back({{"question_id", questions[i].question_id},
                   {"candidates", r.candidates},
                   {"labels", r.labels},
                   {"target_relations", r.relations},
                   {"truncated", r.truncated},
                   {"unreachable", r.unreachable},
                   {"fallback", r.fallback}});
  }
  nlohmann::json summary{{"annotator", label_annotator_id(cfg, client)},
                         {"questions", questions.size()},
                         {"labelled", labelled},
                         {"fallbacks", fallbacks},
                         {"truncated", truncated},
                         {"parse_failures", parse_failures},
                         {"transport_failures", transport_failures},
                         {"skipped_unreachable", skipped},
                         {"per_question", std::move(per)}};
  // Call and cache-hit counts depend on cache state, so they are printed by
  // the CLI rather than stored in the summary file.
  write_json_atomic(cfg.output("label_summary.json"), summary);
  summary["client_calls"] = calls;
  summary["cache_hits"] = hits;
  return summary;
}

// ---------------------------------------------------------------------------
// train

inline std::vector<TrainingExample> load_training_examples(const PipelineConfig& cfg,
                                                           const std::vector<QuestionInstance>& questions,
                                                           const EmbeddingProvider& provider,
                                                           std::vector<std::string>* skipped = nullptr) {
  AnnotationCache cache(cfg.cache_path());
  auto client = make_client(cfg);
  const auto label_id = label_annotator_id(cfg, *client);
  const auto relation_id = cfg.annotator == "external" ? client->id() : MockAnnotatorClient().id();

  std::vector<std::optional<TrainingExample>> slots(questions.size());
  std::vector<std::string> missing(questions.size());
  parallel_for(questions.size(), cfg.workers, [&](std::size_t i) {
    const auto& q = questions[i];
    auto cands = candidate_paths_for(q, cfg.candidate_cap);
    if (cands.unreachable) return;
    auto labels = cached_labels(q, cands.paths, cache, label_id);
    if (!labels) {
      missing[i] = q.question_id;
      return;
    }
    if (labels->empty()) return;
    slots[i] = make_training_example(q, provider, *labels, cached_target_relations(q, cache, relation_id));
  });
  for (const auto& m : missing)
    if (!m.empty()) throw ConfigError("question " + m + " has no cached labels; run the label stage first");
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) out.push_back(std::move(*slots[i]));
    else if (skipped) skipped->push_back(questions[i].question_id);
  }
  return out;
}

inline nlohmann::json cmd_train(const PipelineConfig& cfg) {
  require_file(cfg.train_questions, "training questions");
  require_file(cfg.cache_path(), "annotation cache");
  auto questions = load_sorted_questions(cfg.train_questions);
  auto provider = make_provider(cfg);
  std::vector<std::string> skipped;
  auto data = load_training_examples(cfg, questions, *provider, &skipped);
  if (data.empty()) throw ConfigError("no trainable questions in " + cfg.train_questions.string());

  auto result = train(data, cfg.train);
  std::filesystem::create_directories(cfg.output_dir);
  save_params(cfg.checkpoint(), result.params);
  std::vector<std::string> log;
  for (const auto& e : result.trace)
    log.push_back(nlohmann::json{{"epoch", e.epoch}, {"loss", e.total}, {"loss_q", e.question}, {"loss_path", e.path}}
                      .dump());
  write_lines_atomic(cfg.output("train_log.jsonl"), log);
  return {{"examples", data.size()},
          {"skipped", skipped},
          {"epochs", cfg.train.epochs},
          {"final_loss", result.trace.empty() ? nlohmann::json() : nlohmann::json(result.trace.back().total)},
          {"checkpoint", cfg.checkpoint().string()}};
}

// ---------------------------------------------------------------------------
// retrieve / eval

inline std::vector<QuestionResult> cmd_retrieve(const PipelineConfig& cfg) {
  require_file(cfg.test_questions, "test questions");
  require_file(cfg.checkpoint(), "checkpoint");
  auto questions = load_sorted_questions(cfg.test_questions);
  auto params = load_params(cfg.checkpoint());
  auto provider = make_provider(cfg);
  if (provider->dim() != params.text_dim())
    throw ConfigError("checkpoint text dimension " + std::to_string(params.text_dim()) +
                      " does not match embeddings (" + std::to_string(provider->dim()) + ")");

  std::vector<QuestionResult> results(questions.size());
  std::vector<std::string> blocks(questions.size());
  parallel_for(questions.size(), cfg.workers, [&](std::size_t i) {
    auto qg = prepare_question(questions[i], *provider);
    auto set = retrieve(params, qg, cfg.inference);
    results[i] = make_result(questions[i], set);
    blocks[i] = serialize_for_reasoner(set, questions[i]);
  });

  std::vector<std::string> lines;
  for (const auto& r : results) lines.push_back(result_to_json(r).dump());
  std::filesystem::create_directories(cfg.output_dir);
  write_lines_atomic(cfg.output("results.jsonl"), lines);
  std::string text;
  for (const auto& b : blocks) text += b + '\n';
  write_file_atomic(cfg.output("reasoner_input.txt"), text);
  return results;
}

inline std::vector<QuestionResult> load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("results file not found: " + path.string());
  std::vector<QuestionResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(result_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad results record: ") + e.what(), lineno);
    }
  }
  return out;
}

inline nlohmann::json cmd_eval(const PipelineConfig& cfg) {
  auto results = load_results(cfg.output("results.jsonl"));
  auto summary = summary_to_json(results);
  write_json_atomic(cfg.output("summary.json"), summary);
  return summary;
}

// ---------------------------------------------------------------------------
// ablation: rational vs shortest-path labels, otherwise identical runs

inline nlohmann::json cmd_ablate(const PipelineConfig& cfg) {
  nlohmann::json report{{"test_questions", cfg.test_questions.string()}, {"strategies", nlohmann::json::object()}};
  for (const std::string strategy : {"rational", "shortest"}) {
    PipelineConfig c = cfg;
    if (strategy == "shortest") c.annotator = "shortest";
    c.output_dir = cfg.output_dir / ("ablation_" + strategy);
    c.annotation_cache = cfg.cache_path();
    cmd_label(c);
    cmd_train(c);
    cmd_retrieve(c);
    auto s = cmd_eval(c);
    report["strategies"][strategy] = {{"annotator", c.annotator},
                                      {"checkpoint", c.checkpoint().string()},
                                      {"hit", s["hit"]},
                                      {"macro_f1", s["macro_f1"]},
                                      {"mean_retrieved_triples", s["mean_retrieved_triples"]}};
  }
  std::filesystem::create_directories(cfg.output_dir);
  write_json_atomic(cfg.output("ablation_report.json"), report);
  return report;
}

}  // namespace rapl
