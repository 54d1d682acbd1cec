#pragma once

// Random fixtures and brute-force oracles shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rapl/embedding.hpp"
#include "rapl/kg_model.hpp"
#include "rapl/line_graph.hpp"
#include "rapl/path_tools.hpp"
#include "rapl/retriever.hpp"

namespace testing_support {

using rapl::KnowledgeSubgraph;
using rapl::TripleId;

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Directed multigraph with self-loops and parallel triples allowed.
inline KnowledgeSubgraph random_graph(std::mt19937_64& rng, std::size_t max_entities, std::size_t max_triples,
                                      std::size_t min_triples = 0) {
  KnowledgeSubgraph g;
  const std::size_t n = pick(rng, 1, max_entities);
  const std::size_t m = pick(rng, min_triples, max_triples);
  const std::size_t rels = pick(rng, 1, 4);
  for (std::size_t i = 0; i < n; ++i) g.add_entity("e" + std::to_string(i));
  for (std::size_t i = 0; i < m; ++i)
    g.add_triple("e" + std::to_string(pick(rng, 0, n - 1)), "r" + std::to_string(pick(rng, 0, rels - 1)),
                 "e" + std::to_string(pick(rng, 0, n - 1)));
  return g;
}

/// O(|E|^2) scan over ordered triple pairs with tail(x) == head(y).
inline std::size_t pair_scan_edges(const KnowledgeSubgraph& g) {
  std::size_t c = 0;
  for (const auto& x : g.triples())
    for (const auto& y : g.triples()) c += x.tail == y.head;
  return c;
}

inline std::size_t degree_product_sum(const KnowledgeSubgraph& g) {
  std::vector<std::size_t> in(g.entity_count()), out(g.entity_count());
  for (const auto& t : g.triples()) {
    ++out[t.head.value];
    ++in[t.tail.value];
  }
  std::size_t s = 0;
  for (std::size_t v = 0; v < in.size(); ++v) s += in[v] * out[v];
  return s;
}

/// All sequences of k triples with tail(t_i) == head(t_{i+1}) (walks in G).
/// With `distinct`, no triple repeats.
inline std::set<std::vector<TripleId>> walks_in_graph(const KnowledgeSubgraph& g, std::size_t k, bool distinct) {
  std::set<std::vector<TripleId>> out;
  std::vector<TripleId> cur;
  std::function<void()> rec = [&] {
    if (cur.size() == k) {
      out.insert(cur);
      return;
    }
    for (const auto& t : g.triples()) {
      if (!cur.empty() && g.triple(cur.back()).tail != t.head) continue;
      if (distinct && std::find(cur.begin(), cur.end(), t.id) != cur.end()) continue;
      cur.push_back(t.id);
      rec();
      cur.pop_back();
    }
  };
  if (k > 0) rec();
  return out;
}

/// All node sequences of k nodes along line-graph edges (walks with k-1 hops),
/// found from has_edge only.
inline std::set<std::vector<rapl::NodeId>> walks_in_line_graph(const rapl::LineGraphView& lg, std::size_t k,
                                                               bool distinct) {
  std::set<std::vector<rapl::NodeId>> out;
  std::vector<rapl::NodeId> cur;
  std::function<void()> rec = [&] {
    if (cur.size() == k) {
      out.insert(cur);
      return;
    }
    for (rapl::NodeId v = 0; v < lg.node_count(); ++v) {
      if (!cur.empty() && !lg.has_edge(cur.back(), v)) continue;
      if (distinct && std::find(cur.begin(), cur.end(), v) != cur.end()) continue;
      cur.push_back(v);
      rec();
      cur.pop_back();
    }
  };
  if (k > 0) rec();
  return out;
}

inline constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max() / 4;

/// Floyd-Warshall hop distances over entities.
inline std::vector<std::vector<std::size_t>> floyd_warshall(const KnowledgeSubgraph& g) {
  const std::size_t n = g.entity_count();
  std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, kInf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
  for (const auto& t : g.triples())
    if (t.head != t.tail) d[t.head.value][t.tail.value] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

/// Floyd-Warshall over line-graph nodes.
inline std::vector<std::vector<std::size_t>> line_graph_distances(const rapl::LineGraphView& lg) {
  const std::size_t n = lg.node_count();
  std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, kInf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
  for (rapl::NodeId x = 0; x < n; ++x)
    for (auto y : lg.successors(x))
      if (x != y) d[x][y] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

/// Unbounded DFS over triple-distinct walks from s, collecting those that end
/// at t with length in [lo, hi].
inline std::set<std::vector<TripleId>> dfs_paths(const KnowledgeSubgraph& g, rapl::EntityId s, rapl::EntityId t,
                                                 std::size_t lo, std::size_t hi) {
  std::set<std::vector<TripleId>> out;
  std::vector<TripleId> cur;
  std::function<void(rapl::EntityId)> rec = [&](rapl::EntityId at) {
    if (cur.size() >= lo && cur.size() <= hi && at == t && !cur.empty()) out.insert(cur);
    if (cur.size() == hi) return;
    for (const auto& tr : g.triples()) {
      if (tr.head != at || std::find(cur.begin(), cur.end(), tr.id) != cur.end()) continue;
      cur.push_back(tr.id);
      rec(tr.tail);
      cur.pop_back();
    }
  };
  rec(s);
  return out;
}

/// Random labelled subgraph with lexical entity and relation names, suitable
/// for feature construction.
inline std::shared_ptr<KnowledgeSubgraph> random_lexical_graph(std::mt19937_64& rng, std::size_t entities,
                                                              std::size_t triples) {
  static const char* kWords[] = {"river", "castle", "piano", "harbor", "comet", "lantern", "meadow", "violin"};
  static const char* kRels[] = {"film.actor.film", "people.person.spouse", "location.location.contains",
                                "music.artist.album", "book.author.works"};
  auto g = std::make_shared<KnowledgeSubgraph>();
  for (std::size_t i = 0; i < entities; ++i)
    g->add_entity(i % 3 == 2 ? "m.0" + std::to_string(i) : std::string(kWords[i % 8]) + " " + std::to_string(i));
  for (std::size_t i = 0; i < triples; ++i)
    g->add_triple(g->entity_label(rapl::EntityId{static_cast<std::uint32_t>(pick(rng, 0, entities - 1))}),
                  kRels[pick(rng, 0, 4)],
                  g->entity_label(rapl::EntityId{static_cast<std::uint32_t>(pick(rng, 0, entities - 1))}));
  return g;
}

/// Fills every parameter with N(0, scale^2).
inline void randomize(rapl::RetrieverParams& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [name, m] : p.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
}

/// Training example on a random lexical graph whose gold path is a random
/// triple-distinct walk from a question-entity triple. Node count <= max_nodes.
struct Fixture {
  rapl::QuestionInstance question;
  rapl::TrainingExample example;
  rapl::LossTarget target;
};

inline Fixture random_fixture(std::mt19937_64& rng, const rapl::EmbeddingProvider& embed,
                            std::size_t max_nodes) {
  auto g = random_lexical_graph(rng, pick(rng, 3, 6), pick(rng, 3, max_nodes));
  const auto& first = g->triple(0);
  std::vector<TripleId> gold{first.id};
  const std::size_t len = pick(rng, 1, 3);
  while (gold.size() < len) {
    std::vector<TripleId> next;
    for (auto t : g->out_triples(g->triple(gold.back()).tail))
      if (std::find(gold.begin(), gold.end(), t) == gold.end()) next.push_back(t);
    if (next.empty()) break;
    gold.push_back(next[pick(rng, 0, next.size() - 1)]);
  }
  auto q = rapl::make_instance("fx", "which film or album did the person author", {g->entity_label(first.head)},
                               {g->entity_label(g->triple(gold.back()).tail)}, g);
  std::set<rapl::RelationId> targets;
  for (std::uint32_t r = 0; r < g->relation_count(); ++r)
    if (pick(rng, 0, 2) == 0) targets.insert(rapl::RelationId(r));
  auto ex = rapl::make_training_example(q, embed, {rapl::ReasoningPath{gold}}, targets);
  auto target = rapl::make_loss_target(ex, 0);
  return Fixture{std::move(q), std::move(ex), std::move(target)};
}

/// Per-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-10)
/// against central differences of the total loss.
inline std::map<std::string, double> finite_difference_errors(const rapl::TrainingExample& ex,
                                                              const rapl::LossTarget& target,
                                                              const rapl::RetrieverParams& params,
                                                              const rapl::LossWeights& weights,
                                                              const rapl::DropoutMasks& masks = {},
                                                              double eps = 1e-5) {
  auto analytic = rapl::loss_and_gradients(ex, target, params, weights, masks).grads;
  auto probe = params;
  std::map<std::string, double> out;
  auto ptensors = probe.tensors();
  auto gtensors = analytic.tensors();
  for (std::size_t k = 0; k < ptensors.size(); ++k) {
    auto& m = *ptensors[k].second;
    Eigen::MatrixXd numeric(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double x = m.data()[i];
      m.data()[i] = x + eps;
      const double up = rapl::evaluate_loss(ex, target, probe, weights, masks).total;
      m.data()[i] = x - eps;
      const double down = rapl::evaluate_loss(ex, target, probe, weights, masks).total;
      m.data()[i] = x;
      numeric.data()[i] = (up - down) / (2.0 * eps);
    }
    const auto& a = *gtensors[k].second;
    const double denom = std::max({a.norm(), numeric.norm(), 1e-10});
    out[ptensors[k].first] = (a - numeric).norm() / denom;
  }
  return out;
}

}  // namespace testing_support
