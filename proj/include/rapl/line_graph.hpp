#pragma once

// Directed line graph l(G): one node per triple, an edge x -> y whenever
// tail(x) == head(y). Node ids coincide with triple ids.

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "kg_model.hpp"

namespace rapl {

using NodeId = std::uint32_t;

struct LineGraphStats {
  std::size_t edge_visits = 0;
};

class LineGraphView {
 public:
  LineGraphView() = default;

  std::size_t node_count() const noexcept { return out_.size(); }
  std::size_t edge_count() const noexcept { return edges_; }

  std::span<const NodeId> successors(NodeId v) const { return out_.at(v); }
  std::span<const NodeId> predecessors(NodeId v) const { return in_.at(v); }

  bool has_edge(NodeId from, NodeId to) const {
    const auto& s = out_.at(from);
    return std::binary_search(s.begin(), s.end(), to);
  }

  /// Source subgraph; null for views assembled directly from adjacency.
  const KnowledgeSubgraph* source() const noexcept { return source_; }
  bool is_reversed() const noexcept { return reversed_; }

  /// Same graph with every edge flipped.
  LineGraphView reversed() const {
    LineGraphView r = *this;
    std::swap(r.out_, r.in_);
    r.reversed_ = !reversed_;
    return r;
  }

  friend bool operator==(const LineGraphView& a, const LineGraphView& b) {
    return a.out_ == b.out_ && a.in_ == b.in_;
  }

  /// Assembles a view from an explicit edge list; used by tests and fixtures.
  static LineGraphView from_edges(std::size_t n, std::span<const std::pair<NodeId, NodeId>> edges) {
    LineGraphView lg;
    lg.out_.assign(n, {});
    lg.in_.assign(n, {});
    for (auto [a, b] : edges) {
      lg.out_.at(a).push_back(b);
      lg.in_.at(b).push_back(a);
    }
    for (auto& v : lg.out_) std::sort(v.begin(), v.end());
    for (auto& v : lg.in_) std::sort(v.begin(), v.end());
    lg.edges_ = edges.size();
    return lg;
  }

 private:
  friend LineGraphView build_line_graph(const KnowledgeSubgraph&, LineGraphStats*);

  std::vector<std::vector<NodeId>> out_;
  std::vector<std::vector<NodeId>> in_;
  std::size_t edges_ = 0;
  const KnowledgeSubgraph* source_ = nullptr;
  bool reversed_ = false;
};

/// Builds l(G) in O(|E| * d_max): each triple is linked to the head bucket of
/// its tail entity. The optional counter records one visit per emitted edge.
inline LineGraphView build_line_graph(const KnowledgeSubgraph& g, LineGraphStats* stats = nullptr) {
  LineGraphView lg;
  const auto n = g.triple_count();
  lg.out_.assign(n, {});
  lg.in_.assign(n, {});
  lg.source_ = &g;
  for (const auto& x : g.triples()) {
    for (TripleId y : g.out_triples(x.tail)) {
      lg.out_[x.id].push_back(y);
      lg.in_[y].push_back(x.id);
      ++lg.edges_;
      if (stats) ++stats->edge_visits;
    }
  }
  // out lists are already sorted (head buckets are id-ordered); in lists are
  // filled in increasing x, so sorted as well.
  return lg;
}

inline LineGraphView reverse(const LineGraphView& lg) { return lg.reversed(); }

/// Σ_v indeg(v) * outdeg(v), the exact edge count of l(G).
inline std::size_t expected_line_graph_edges(const KnowledgeSubgraph& g) {
  std::size_t total = 0;
  for (std::uint32_t v = 0; v < g.entity_count(); ++v)
    total += g.in_degree(EntityId(v)) * g.out_degree(EntityId(v));
  return total;
}

/// Maps a contiguous triple sequence onto its line-graph node sequence.
inline std::vector<NodeId> lift_path(const KnowledgeSubgraph& g, std::span<const TripleId> path) {
  if (path.empty()) throw ContractViolation("lift_path: empty path");
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (path[i] >= g.triple_count()) throw ContractViolation("lift_path: unknown triple id");
    if (i > 0 && g.triple(path[i - 1]).tail != g.triple(path[i]).head)
      throw ContractViolation("lift_path: triples " + std::to_string(path[i - 1]) + " and " +
                              std::to_string(path[i]) + " are not contiguous");
  }
  return {path.begin(), path.end()};
}

/// Inverse of lift_path; every consecutive pair must be an edge of `lg`.
inline std::vector<TripleId> lower_path(const LineGraphView& lg, std::span<const NodeId> path) {
  if (path.empty()) throw ContractViolation("lower_path: empty path");
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (path[i] >= lg.node_count()) throw ContractViolation("lower_path: unknown node id");
    if (i > 0 && !lg.has_edge(path[i - 1], path[i]))
      throw ContractViolation("lower_path: no line-graph edge " + std::to_string(path[i - 1]) + " -> " +
                              std::to_string(path[i]));
  }
  return {path.begin(), path.end()};
}

/// Graphviz export; node labels are "head|relation|tail".
inline void write_dot(std::ostream& out, const LineGraphView& lg, const KnowledgeSubgraph& g) {
  auto esc = [](const std::string& s) {
    std::string r;
    for (char c : s) {
      if (c == '"' || c == '\\') r += '\\';
      r += c;
    }
    return r;
  };
  out << "digraph line_graph {\n";
  for (NodeId v = 0; v < lg.node_count(); ++v) {
    const auto& t = g.triple(v);
    out << "  n" << v << " [label=\"" << esc(g.entity_label(t.head)) << '|' << esc(g.relation_label(t.relation))
        << '|' << esc(g.entity_label(t.tail)) << "\"];\n";
  }
  for (NodeId v = 0; v < lg.node_count(); ++v)
    for (NodeId w : lg.successors(v)) out << "  n" << v << " -> n" << w << ";\n";
  out << "}\n";
}

}  // namespace rapl
