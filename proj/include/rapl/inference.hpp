#pragma once

// Stochastic path retrieval (K start draws, several rollouts each, top-M with
// deduplication), retriever-only answers, and QA metrics.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retriever.hpp"

namespace rapl {

struct InferenceConfig {
  std::size_t K = 60;  // start-triple draws, with replacement
  std::size_t M = 80;  // retained paths
  std::size_t rollouts_per_start = 5;
  std::size_t max_hops = 4;  // triples per path
  std::uint64_t seed = 0;
  bool dedup_before_truncate = false;

  static InferenceConfig preset(std::size_t k, std::size_t m) {
    static const std::set<std::pair<std::size_t, std::size_t>> kPresets{{60, 80}, {80, 120}, {120, 200}};
    if (!kPresets.count({k, m}))
      throw ContractViolation("unsupported retrieval preset K=" + std::to_string(k) + ", M=" + std::to_string(m));
    InferenceConfig c;
    c.K = k;
    c.M = m;
    return c;
  }

  void validate() const {
    if (K < 1 || M < 1 || rollouts_per_start < 1 || max_hops < 1)
      throw ContractViolation("inference config needs K, M, rollouts and max_hops >= 1");
  }
};

/// Start and step distributions used by the sampler.
class PathPolicy {
 public:
  virtual ~PathPolicy() = default;
  virtual const LineGraphView& line_graph() const = 0;
  virtual const std::vector<NodeId>& start_candidates() const = 0;
  /// Log-probabilities aligned with start_candidates().
  virtual std::vector<double> start_log_probs() const = 0;
  virtual StepDistribution step(NodeId current, std::span<const NodeId> prefix) const = 0;
};

inline std::vector<double> log_softmax(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : logits) m = std::max(m, x);
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  const double lse = m + std::log(s);
  std::vector<double> out;
  for (double x : logits) out.push_back(x - lse);
  return out;
}

/// The trained retriever on one question: z and z_q are computed once.
class ModelPolicy : public PathPolicy {
 public:
  ModelPolicy(const QuestionGraph& qg, const RetrieverParams& params)
      : qg_(qg),
        params_(params),
        z_(encode_state(qg.forward_op, qg.backward_op, qg.features, params).z),
        zq_(question_vector(qg.question_embedding, params)) {}

  const LineGraphView& line_graph() const override { return qg_.lg; }
  const std::vector<NodeId>& start_candidates() const override { return qg_.start_candidates; }

  std::vector<double> start_log_probs() const override {
    std::vector<double> logits;
    for (NodeId v : qg_.start_candidates) logits.push_back(zq_.dot(z_.row(v)));
    return log_softmax(logits);
  }

  StepDistribution step(NodeId current, std::span<const NodeId> prefix) const override {
    return step_distribution(qg_.lg, z_, zq_, current, prefix, params_);
  }

  const Matrix& z() const { return z_; }
  const RowVector& zq() const { return zq_; }

 private:
  const QuestionGraph& qg_;
  const RetrieverParams& params_;
  Matrix z_;
  RowVector zq_;
};

/// Baseline: uniform start choice and uniform next-step choice (STOP included).
class RandomWalkPolicy : public PathPolicy {
 public:
  explicit RandomWalkPolicy(const QuestionGraph& qg) : qg_(qg) {}

  const LineGraphView& line_graph() const override { return qg_.lg; }
  const std::vector<NodeId>& start_candidates() const override { return qg_.start_candidates; }

  std::vector<double> start_log_probs() const override {
    const double lp = -std::log(static_cast<double>(qg_.start_candidates.size()));
    return std::vector<double>(qg_.start_candidates.size(), lp);
  }

  StepDistribution step(NodeId current, std::span<const NodeId> prefix) const override {
    StepDistribution d;
    for (NodeId c : qg_.lg.successors(current))
      if (std::find(prefix.begin(), prefix.end(), c) == prefix.end()) d.candidates.push_back(c);
    d.logits.assign(d.candidates.size() + 1, 0.0);
    d.probs.assign(d.candidates.size() + 1, 1.0 / static_cast<double>(d.candidates.size() + 1));
    return d;
  }

 private:
  const QuestionGraph& qg_;
};

namespace detail {

inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u above the total; take the last index with mass.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return i;
  return probs.size() - 1;
}

}  // namespace detail

struct StartSample {
  NodeId node = 0;
  double log_prob = 0.0;
};

/// Draws v_q(0) from the softmax over V_cand. nullopt when V_cand is empty.
inline std::optional<StartSample> sample_question_triple(const PathPolicy& policy, Rng& rng) {
  const auto& cands = policy.start_candidates();
  if (cands.empty()) return std::nullopt;
  auto lp = policy.start_log_probs();
  std::vector<double> probs;
  for (double x : lp) probs.push_back(std::exp(x));
  auto i = detail::sample_categorical(probs, rng);
  return StartSample{cands[i], lp[i]};
}

struct Rollout {
  std::vector<NodeId> nodes;
  double log_prob = 0.0;
  bool stopped = false;  // false when cut at max_hops
};

/// Samples successive steps from `start` until STOP or `max_hops` triples.
inline Rollout rollout_path(const PathPolicy& policy, StartSample start, Rng& rng, std::size_t max_hops) {
  Rollout r;
  r.nodes.push_back(start.node);
  r.log_prob = start.log_prob;
  while (r.nodes.size() < max_hops) {
    auto d = policy.step(r.nodes.back(), r.nodes);
    auto i = detail::sample_categorical(d.probs, rng);
    r.log_prob += std::log(d.probs[i]);
    if (i == d.stop_index()) {
      r.stopped = true;
      break;
    }
    r.nodes.push_back(d.candidates[i]);
  }
  return r;
}

/// Highest-probability start, then highest-probability steps.
inline std::vector<NodeId> greedy_decode(const PathPolicy& policy, std::size_t max_hops) {
  const auto& cands = policy.start_candidates();
  if (cands.empty()) return {};
  auto lp = policy.start_log_probs();
  std::vector<NodeId> path{cands[static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin())]};
  while (path.size() < max_hops) {
    auto d = policy.step(path.back(), path);
    auto i = static_cast<std::size_t>(std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin());
    if (i == d.stop_index()) break;
    path.push_back(d.candidates[i]);
  }
  return path;
}

struct ScoredPath {
  ReasoningPath path;
  double score = 0.0;  // log-probability
};

struct RetrievedPathSet {
  std::vector<ScoredPath> paths;  // unique, score-descending
  std::size_t triple_count = 0;   // distinct triples covered
  bool unanswerable = false;      // empty V_cand
};

inline std::uint64_t question_seed(std::uint64_t seed, const std::string& question_id) {
  return text::splitmix64(seed ^ text::fnv1a(question_id));
}

inline RetrievedPathSet retrieve(const PathPolicy& policy, const InferenceConfig& cfg, Rng& rng) {
  cfg.validate();
  RetrievedPathSet out;
  if (policy.start_candidates().empty()) {
    out.unanswerable = true;
    return out;
  }
  std::vector<ScoredPath> all;
  for (std::size_t k = 0; k < cfg.K; ++k) {
    auto start = *sample_question_triple(policy, rng);
    for (std::size_t r = 0; r < cfg.rollouts_per_start; ++r) {
      auto ro = rollout_path(policy, start, rng, cfg.max_hops);
      all.push_back({{lower_path(policy.line_graph(), ro.nodes)}, ro.log_prob});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const ScoredPath& a, const ScoredPath& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.path < b.path;
  });
  auto dedup = [](std::vector<ScoredPath>& v) {
    std::set<ReasoningPath> seen;
    std::vector<ScoredPath> kept;
    for (auto& p : v)
      if (seen.insert(p.path).second) kept.push_back(std::move(p));
    v = std::move(kept);
  };
  if (cfg.dedup_before_truncate) dedup(all);
  if (all.size() > cfg.M) all.resize(cfg.M);
  if (!cfg.dedup_before_truncate) dedup(all);
  std::set<TripleId> covered;
  for (const auto& p : all) covered.insert(p.path.triples.begin(), p.path.triples.end());
  out.triple_count = covered.size();
  out.paths = std::move(all);
  return out;
}

/// Model retrieval for one question with its own seeded stream.
inline RetrievedPathSet retrieve(const RetrieverParams& params, const QuestionGraph& qg, const InferenceConfig& cfg) {
  ModelPolicy policy(qg, params);
  Rng rng(question_seed(cfg.seed, qg.question_id));
  return retrieve(policy, cfg, rng);
}

inline RetrievedPathSet retrieve_random_walk(const QuestionGraph& qg, const InferenceConfig& cfg) {
  RandomWalkPolicy policy(qg);
  Rng rng(question_seed(cfg.seed, qg.question_id));
  return retrieve(policy, cfg, rng);
}

/// Terminal entities of the retrieved paths.
inline std::set<EntityId> extract_answers(const KnowledgeSubgraph& g, const RetrievedPathSet& set) {
  std::set<EntityId> out;
  for (const auto& p : set.paths) out.insert(path_target(g, p.path));
  return out;
}

inline std::set<std::string> answer_labels(const KnowledgeSubgraph& g, const std::set<EntityId>& ids) {
  std::set<std::string> out;
  for (auto e : ids) out.insert(g.entity_label(e));
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// 1 when any gold answer is predicted. nullopt when gold is empty.
template <class Set>
std::optional<int> hit(const Set& predicted, const Set& gold) {
  if (gold.empty()) return std::nullopt;
  for (const auto& g : gold)
    if (predicted.count(g)) return 1;
  return 0;
}

template <class Set>
double f1_score(const Set& predicted, const Set& gold) {
  std::size_t common = 0;
  for (const auto& p : predicted) common += gold.count(p);
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(predicted.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

/// Mean per-question F1; pairs with empty gold are skipped.
template <class Set>
double macro_f1(const std::vector<std::pair<Set, Set>>& pairs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [pred, gold] : pairs) {
    if (gold.empty()) continue;
    sum += f1_score(pred, gold);
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

struct QuestionResult {
  std::string question_id;
  std::string template_id;
  std::set<std::string> predicted;
  std::set<std::string> gold;
  std::optional<std::size_t> d_min;
  bool answers_in_graph = true;
  bool unanswerable = false;
  std::size_t retrieved_triples = 0;
  std::vector<ScoredPath> paths;
  std::vector<std::string> path_text;
};

struct MetricSummary {
  std::size_t questions = 0;   // counted in Hit / Macro-F1
  std::size_t excluded = 0;    // empty gold
  double hit = 0.0;
  double macro_f1 = 0.0;
};

inline MetricSummary summarize(const std::vector<const QuestionResult*>& results) {
  MetricSummary s;
  double hits = 0.0, f1 = 0.0;
  for (const auto* r : results) {
    auto h = hit(r->predicted, r->gold);
    if (!h) {
      ++s.excluded;
      continue;
    }
    ++s.questions;
    hits += *h;
    f1 += f1_score(r->predicted, r->gold);
  }
  if (s.questions) {
    s.hit = hits / static_cast<double>(s.questions);
    s.macro_f1 = f1 / static_cast<double>(s.questions);
  }
  return s;
}

inline MetricSummary summarize(const std::vector<QuestionResult>& results) {
  std::vector<const QuestionResult*> ptrs;
  for (const auto& r : results) ptrs.push_back(&r);
  return summarize(ptrs);
}

inline std::string hop_bucket(std::size_t d) { return d <= 1 ? "1" : d == 2 ? "2" : ">=3"; }

/// Metrics per shortest question-to-answer distance bucket {1, 2, >=3}.
/// Questions with answers missing from the graph (or unreachable) are left out.
inline std::map<std::string, MetricSummary> hop_breakdown(const std::vector<QuestionResult>& results) {
  std::map<std::string, std::vector<const QuestionResult*>> buckets;
  for (const auto& r : results) {
    if (!r.answers_in_graph || !r.d_min) continue;
    buckets[hop_bucket(*r.d_min)].push_back(&r);
  }
  std::map<std::string, MetricSummary> out;
  for (auto& [k, v] : buckets) out[k] = summarize(v);
  return out;
}

/// The block a downstream reasoner receives: question, then one path per line.
inline std::string serialize_for_reasoner(const RetrievedPathSet& set, const QuestionInstance& q) {
  std::ostringstream s;
  s << "Question: " << q.text << "\n";
  s << "Retrieved reasoning paths:\n";
  for (const auto& p : set.paths) s << serialize_path(q.graph(), p.path) << '\n';
  return s.str();
}

inline QuestionResult make_result(const QuestionInstance& q, const RetrievedPathSet& set) {
  QuestionResult r;
  r.question_id = q.question_id;
  r.template_id = q.template_id;
  r.predicted = answer_labels(q.graph(), extract_answers(q.graph(), set));
  r.gold = {q.answer_labels.begin(), q.answer_labels.end()};
  r.d_min = question_answer_distance(q);
  r.answers_in_graph = q.answers_in_graph;
  r.unanswerable = set.unanswerable;
  r.retrieved_triples = set.triple_count;
  r.paths = set.paths;
  for (const auto& p : set.paths) r.path_text.push_back(serialize_path(q.graph(), p.path));
  return r;
}

inline nlohmann::json result_to_json(const QuestionResult& r) {
  nlohmann::json paths = nlohmann::json::array();
  for (std::size_t i = 0; i < r.paths.size(); ++i)
    paths.push_back({{"path", r.path_text.at(i)}, {"triples", r.paths[i].path.triples}, {"score", r.paths[i].score}});
  auto h = hit(r.predicted, r.gold);
  nlohmann::json j{{"question_id", r.question_id},
                   {"paths", std::move(paths)},
                   {"predicted_answers", r.predicted},
                   {"gold_answers", r.gold},
                   {"hit", h ? nlohmann::json(*h) : nlohmann::json()},
                   {"f1", r.gold.empty() ? nlohmann::json() : nlohmann::json(f1_score(r.predicted, r.gold))},
                   {"d_min", r.d_min ? nlohmann::json(*r.d_min) : nlohmann::json()},
                   {"hop_bucket", r.d_min ? nlohmann::json(hop_bucket(*r.d_min)) : nlohmann::json()},
                   {"answers_in_graph", r.answers_in_graph},
                   {"unanswerable", r.unanswerable},
                   {"retrieved_triples", r.retrieved_triples}};
  if (!r.template_id.empty()) j["template"] = r.template_id;
  return j;
}

inline QuestionResult result_from_json(const nlohmann::json& j) {
  QuestionResult r;
  r.question_id = j.at("question_id").get<std::string>();
  r.template_id = j.value("template", std::string{});
  r.predicted = j.at("predicted_answers").get<std::set<std::string>>();
  r.gold = j.at("gold_answers").get<std::set<std::string>>();
  if (!j.at("d_min").is_null()) r.d_min = j.at("d_min").get<std::size_t>();
  r.answers_in_graph = j.value("answers_in_graph", true);
  r.unanswerable = j.value("unanswerable", false);
  r.retrieved_triples = j.value("retrieved_triples", std::size_t{0});
  for (const auto& p : j.value("paths", nlohmann::json::array())) {
    r.paths.push_back({{p.at("triples").get<std::vector<TripleId>>()}, p.at("score").get<double>()});
    r.path_text.push_back(p.at("path").get<std::string>());
  }
  return r;
}

inline nlohmann::json summary_to_json(const std::vector<QuestionResult>& results) {
  auto s = summarize(results);
  double triples = 0.0;
  for (const auto& r : results) triples += static_cast<double>(r.retrieved_triples);
  nlohmann::json hops = nlohmann::json::object();
  for (const auto& [k, m] : hop_breakdown(results))
    hops[k] = {{"questions", m.questions}, {"hit", m.hit}, {"macro_f1", m.macro_f1}};
  std::size_t absent = 0, unanswerable = 0;
  for (const auto& r : results) {
    absent += !r.answers_in_graph;
    unanswerable += r.unanswerable;
  }
  return {{"questions", results.size()},
          {"evaluated", s.questions},
          {"excluded_empty_gold", s.excluded},
          {"answers_absent", absent},
          {"unanswerable", unanswerable},
          {"hit", s.hit},
          {"macro_f1", s.macro_f1},
          {"mean_retrieved_triples", results.empty() ? 0.0 : triples / static_cast<double>(results.size())},
          {"hops", std::move(hops)}};
}

}  // namespace rapl
