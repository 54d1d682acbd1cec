#pragma once

// Reasoning paths over a subgraph: BFS distances, band-limited candidate
// enumeration, shortest-path labels and the "e0 --r1--> e1" text form.

#include <algorithm>
#include <deque>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kg_model.hpp"

namespace rapl {

/// Ordered triple ids with tail(i) == head(i+1).
struct ReasoningPath {
  std::vector<TripleId> triples;

  std::size_t hops() const noexcept { return triples.size(); }
  auto operator<=>(const ReasoningPath&) const = default;
};

inline bool is_contiguous(const KnowledgeSubgraph& g, const ReasoningPath& p) {
  if (p.triples.empty()) return false;
  for (std::size_t i = 0; i < p.triples.size(); ++i) {
    if (p.triples[i] >= g.triple_count()) return false;
    if (i > 0 && g.triple(p.triples[i - 1]).tail != g.triple(p.triples[i]).head) return false;
  }
  return true;
}

inline EntityId path_source(const KnowledgeSubgraph& g, const ReasoningPath& p) {
  return g.triple(p.triples.front()).head;
}
inline EntityId path_target(const KnowledgeSubgraph& g, const ReasoningPath& p) {
  return g.triple(p.triples.back()).tail;
}

/// e_0 .. e_k
inline std::vector<EntityId> entity_sequence(const KnowledgeSubgraph& g, const ReasoningPath& p) {
  std::vector<EntityId> out;
  if (p.triples.empty()) return out;
  out.push_back(path_source(g, p));
  for (auto t : p.triples) out.push_back(g.triple(t).tail);
  return out;
}

inline std::vector<RelationId> relation_path(const KnowledgeSubgraph& g, const ReasoningPath& p) {
  std::vector<RelationId> out;
  out.reserve(p.triples.size());
  for (auto t : p.triples) out.push_back(g.triple(t).relation);
  return out;
}

inline std::string serialize_path(const KnowledgeSubgraph& g, const ReasoningPath& p) {
  if (p.triples.empty()) return {};
  std::string s = g.entity_label(path_source(g, p));
  for (auto id : p.triples) {
    const auto& t = g.triple(id);
    s += " --";
    s += g.relation_label(t.relation);
    s += "--> ";
    s += g.entity_label(t.tail);
  }
  return s;
}

/// Splits "e0 --r1--> e1 --r2--> e2" into entity and relation labels.
/// Returns nullopt when the text is not in that form.
struct PathText {
  std::vector<std::string> entities;
  std::vector<std::string> relations;
};

inline std::optional<PathText> parse_path_text(std::string_view s) {
  PathText out;
  auto open = s.find(" --");
  if (open == std::string_view::npos) return std::nullopt;
  out.entities.emplace_back(s.substr(0, open));
  s.remove_prefix(open + 3);
  for (;;) {
    auto close = s.find("--> ");
    if (close == std::string_view::npos) return std::nullopt;
    out.relations.emplace_back(s.substr(0, close));
    s.remove_prefix(close + 4);
    auto next = s.find(" --");
    if (next == std::string_view::npos) {
      out.entities.emplace_back(s);
      break;
    }
    out.entities.emplace_back(s.substr(0, next));
    s.remove_prefix(next + 3);
  }
  for (const auto& e : out.entities)
    if (e.empty()) return std::nullopt;
  for (const auto& r : out.relations)
    if (r.empty()) return std::nullopt;
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

inline void check_entity(const KnowledgeSubgraph& g, EntityId e) {
  if (e.value >= g.entity_count()) throw ContractViolation("unknown entity handle " + std::to_string(e.value));
}

constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

// Hop distances from `s` (forward) or to `s` (backward).
inline std::vector<std::size_t> bfs_distances(const KnowledgeSubgraph& g, EntityId s, bool backward = false) {
  std::vector<std::size_t> dist(g.entity_count(), kUnreached);
  std::deque<EntityId> queue{s};
  dist[s.value] = 0;
  while (!queue.empty()) {
    EntityId v = queue.front();
    queue.pop_front();
    auto edges = backward ? g.in_triples(v) : g.out_triples(v);
    for (TripleId t : edges) {
      EntityId w = backward ? g.triple(t).head : g.triple(t).tail;
      if (dist[w.value] == kUnreached) {
        dist[w.value] = dist[v.value] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

}  // namespace detail

inline std::optional<std::size_t> shortest_distance(const KnowledgeSubgraph& g, EntityId s, EntityId t) {
  detail::check_entity(g, s);
  detail::check_entity(g, t);
  auto d = detail::bfs_distances(g, s)[t.value];
  if (d == detail::kUnreached) return std::nullopt;
  return d;
}

struct CandidateSet {
  std::vector<ReasoningPath> paths;
  std::optional<std::size_t> d_min;
  bool truncated = false;
  bool unreachable() const noexcept { return !d_min.has_value(); }
};

inline constexpr std::size_t kDefaultCandidateCap = 200;

/// All triple-simple paths s -> t with length in [d_min, d_min + 2], in
/// lexicographic order of their triple-id sequences, at most `cap` of them.
/// Entities may repeat; a triple may not.
inline CandidateSet enumerate_candidate_paths(const KnowledgeSubgraph& g, EntityId s, EntityId t,
                                              std::size_t cap = kDefaultCandidateCap, std::size_t band = 2) {
  detail::check_entity(g, s);
  detail::check_entity(g, t);
  CandidateSet out;
  auto from_s = detail::bfs_distances(g, s);
  if (from_s[t.value] == detail::kUnreached) return out;
  const std::size_t d = from_s[t.value];
  out.d_min = d;
  const std::size_t lo = std::max<std::size_t>(d, 1);
  const std::size_t hi = d + band;
  auto to_t = detail::bfs_distances(g, t, true);

  std::vector<TripleId> stack;
  std::vector<char> used(g.triple_count(), 0);
  bool done = false;

  // DFS with sorted successor lists emits paths in lexicographic order.
  auto dfs = [&](auto&& self, EntityId at) -> void {
    if (done) return;
    if (at == t && stack.size() >= lo) {
      if (out.paths.size() == cap) {
        out.truncated = true;
        done = true;
        return;
      }
      out.paths.push_back({stack});
    }
    if (stack.size() == hi) return;
    for (TripleId id : g.out_triples(at)) {
      if (used[id]) continue;
      EntityId next = g.triple(id).tail;
      if (to_t[next.value] == detail::kUnreached || stack.size() + 1 + to_t[next.value] > hi) continue;
      used[id] = 1;
      stack.push_back(id);
      self(self, next);
      stack.pop_back();
      used[id] = 0;
      if (done) return;
    }
  };
  dfs(dfs, s);
  return out;
}

/// Paths of length exactly d_min.
inline std::vector<ReasoningPath> shortest_path_labels(const KnowledgeSubgraph& g, EntityId s, EntityId t,
                                                       std::size_t cap = kDefaultCandidateCap) {
  auto c = enumerate_candidate_paths(g, s, t, cap, 0);
  return std::move(c.paths);
}

/// Union over every (question entity, answer entity) pair, sorted and deduplicated.
struct InstanceCandidates {
  std::vector<ReasoningPath> paths;
  bool truncated = false;
  bool unreachable = true;  // no answer reachable from any question entity
};

inline InstanceCandidates candidate_paths_for(const QuestionInstance& q, std::size_t cap = kDefaultCandidateCap) {
  InstanceCandidates out;
  std::set<ReasoningPath> all;
  for (auto s : q.question_entities)
    for (auto t : q.answer_entities) {
      auto c = enumerate_candidate_paths(q.graph(), s, t, cap);
      if (!c.unreachable()) out.unreachable = false;
      out.truncated = out.truncated || c.truncated;
      all.insert(c.paths.begin(), c.paths.end());
    }
  out.paths.assign(all.begin(), all.end());
  return out;
}

inline std::vector<ReasoningPath> shortest_labels_for(const QuestionInstance& q,
                                                      std::size_t cap = kDefaultCandidateCap) {
  std::set<ReasoningPath> all;
  for (auto s : q.question_entities)
    for (auto t : q.answer_entities) {
      auto p = shortest_path_labels(q.graph(), s, t, cap);
      all.insert(p.begin(), p.end());
    }
  return {all.begin(), all.end()};
}

/// Smallest question-to-answer hop distance, if any answer is reachable.
inline std::optional<std::size_t> question_answer_distance(const QuestionInstance& q) {
  std::optional<std::size_t> best;
  for (auto s : q.question_entities) {
    auto dist = detail::bfs_distances(q.graph(), s);
    for (auto t : q.answer_entities)
      if (dist[t.value] != detail::kUnreached && (!best || dist[t.value] < *best)) best = dist[t.value];
  }
  return best;
}

}  // namespace rapl
