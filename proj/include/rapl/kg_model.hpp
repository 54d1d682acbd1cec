#pragma once

// Knowledge-graph data model: interned entity/relation handles, per-question
// subgraphs, question instances and their TSV / JSON-lines persistence.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace rapl {

/// Thrown when an input file does not follow its declared format.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Thrown when well-formed input references something that does not exist.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <class Tag>
struct Handle {
  std::uint32_t value = 0;

  constexpr Handle() = default;
  constexpr explicit Handle(std::uint32_t v) : value(v) {}
  constexpr auto operator<=>(const Handle&) const = default;
};

struct EntityTag {};
struct RelationTag {};
using EntityId = Handle<EntityTag>;
using RelationId = Handle<RelationTag>;
using TripleId = std::uint32_t;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  TripleId id = 0;
};

namespace detail {

// Dense label <-> handle table.
template <class Id>
class Interner {
 public:
  Id intern(std::string_view label) {
    auto it = index_.find(std::string(label));
    if (it != index_.end()) return it->second;
    Id id(static_cast<std::uint32_t>(labels_.size()));
    labels_.emplace_back(label);
    index_.emplace(labels_.back(), id);
    return id;
  }
  std::optional<Id> find(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& label(Id id) const { return labels_.at(id.value); }
  std::size_t size() const noexcept { return labels_.size(); }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, Id> index_;
};

}  // namespace detail

/// Directed multigraph of (head, relation, tail) facts for one question.
/// Treated as immutable once built; share it read-only.
class KnowledgeSubgraph {
 public:
  EntityId add_entity(std::string_view label) {
    auto before = entities_.size();
    EntityId id = entities_.intern(label);
    if (entities_.size() != before) {
      out_.emplace_back();
      in_.emplace_back();
    }
    return id;
  }

  RelationId add_relation(std::string_view label) { return relations_.intern(label); }

  TripleId add_triple(std::string_view head, std::string_view relation, std::string_view tail) {
    EntityId h = add_entity(head);
    RelationId r = add_relation(relation);
    EntityId t = add_entity(tail);
    auto id = static_cast<TripleId>(triples_.size());
    triples_.push_back({h, r, t, id});
    out_[h.value].push_back(id);
    in_[t.value].push_back(id);
    return id;
  }

  std::size_t entity_count() const noexcept { return entities_.size(); }
  std::size_t relation_count() const noexcept { return relations_.size(); }
  std::size_t triple_count() const noexcept { return triples_.size(); }

  const std::vector<Triple>& triples() const noexcept { return triples_; }
  const Triple& triple(TripleId id) const { return triples_.at(id); }

  const std::string& entity_label(EntityId id) const { return entities_.label(id); }
  const std::string& relation_label(RelationId id) const { return relations_.label(id); }
  std::optional<EntityId> find_entity(std::string_view label) const { return entities_.find(label); }
  std::optional<RelationId> find_relation(std::string_view label) const { return relations_.find(label); }

  /// Triples whose head is `e`, in increasing id order.
  std::span<const TripleId> out_triples(EntityId e) const { return out_.at(e.value); }
  /// Triples whose tail is `e`, in increasing id order.
  std::span<const TripleId> in_triples(EntityId e) const { return in_.at(e.value); }

  std::size_t out_degree(EntityId e) const { return out_.at(e.value).size(); }
  std::size_t in_degree(EntityId e) const { return in_.at(e.value).size(); }

  /// Rebuilds both adjacency indices from the triple list and compares.
  bool adjacency_consistent() const {
    std::vector<std::vector<TripleId>> out(entity_count()), in(entity_count());
    for (const auto& t : triples_) {
      if (t.head.value >= entity_count() || t.tail.value >= entity_count()) return false;
      if (t.relation.value >= relation_count()) return false;
      out[t.head.value].push_back(t.id);
      in[t.tail.value].push_back(t.id);
    }
    return out == out_ && in == in_;
  }

  /// Graphs are equal when they hold the same labelled triples in the same order.
  friend bool operator==(const KnowledgeSubgraph& a, const KnowledgeSubgraph& b) {
    if (a.triple_count() != b.triple_count() || a.entity_count() != b.entity_count()) return false;
    for (std::size_t i = 0; i < a.triple_count(); ++i) {
      const auto& x = a.triples_[i];
      const auto& y = b.triples_[i];
      if (a.entity_label(x.head) != b.entity_label(y.head) ||
          a.relation_label(x.relation) != b.relation_label(y.relation) ||
          a.entity_label(x.tail) != b.entity_label(y.tail))
        return false;
    }
    return true;
  }

 private:
  detail::Interner<EntityId> entities_;
  detail::Interner<RelationId> relations_;
  std::vector<Triple> triples_;
  std::vector<std::vector<TripleId>> out_;
  std::vector<std::vector<TripleId>> in_;
};

using SubgraphPtr = std::shared_ptr<const KnowledgeSubgraph>;

struct QuestionInstance {
  std::string question_id;
  std::string text;
  // Labels as given in the source record; the resolved handles follow.
  std::vector<std::string> question_entity_labels;
  std::vector<std::string> answer_labels;
  std::vector<EntityId> question_entities;
  std::vector<EntityId> answer_entities;  // only answers present in the subgraph
  bool answers_in_graph = true;
  std::string template_id;  // optional grouping tag, empty when absent
  SubgraphPtr subgraph;

  const KnowledgeSubgraph& graph() const { return *subgraph; }
};

// ---------------------------------------------------------------------------
// Triples TSV

inline KnowledgeSubgraph parse_triples(std::istream& in) {
  KnowledgeSubgraph g;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != 3)
      throw ParseError("expected 3 tab-separated fields, got " + std::to_string(fields.size()), lineno);
    if (fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw ParseError("empty field in triple", lineno);
    g.add_triple(fields[0], fields[1], fields[2]);
  }
  return g;
}

inline KnowledgeSubgraph load_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open triples file " + path.string());
  return parse_triples(in);
}

inline void write_triples(std::ostream& out, const KnowledgeSubgraph& g) {
  auto check = [](const std::string& s) {
    if (s.find_first_of("\t\n\r") != std::string::npos)
      throw ContractViolation("label contains a tab or newline: " + s);
    return std::string_view(s);
  };
  for (const auto& t : g.triples()) {
    out << check(g.entity_label(t.head)) << '\t' << check(g.relation_label(t.relation)) << '\t'
        << check(g.entity_label(t.tail)) << '\n';
  }
}

inline void save_triples(const std::filesystem::path& path, const KnowledgeSubgraph& g) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_triples(out, g);
}

// ---------------------------------------------------------------------------
// Questions JSONL

namespace detail {

inline std::vector<std::string> string_array(const nlohmann::json& rec, const char* key, std::size_t lineno) {
  if (!rec.contains(key)) throw ParseError(std::string("missing field '") + key + "'", lineno);
  const auto& v = rec.at(key);
  if (!v.is_array()) throw ParseError(std::string("field '") + key + "' must be an array", lineno);
  std::vector<std::string> out;
  for (const auto& x : v) {
    if (!x.is_string()) throw ParseError(std::string("field '") + key + "' must hold strings", lineno);
    out.push_back(x.get<std::string>());
  }
  return out;
}

inline std::string string_field(const nlohmann::json& rec, const char* key, std::size_t lineno) {
  if (!rec.contains(key)) throw ParseError(std::string("missing field '") + key + "'", lineno);
  if (!rec.at(key).is_string()) throw ParseError(std::string("field '") + key + "' must be a string", lineno);
  return rec.at(key).get<std::string>();
}

}  // namespace detail

/// Resolves labels against the subgraph. Unknown question entities are an
/// error; unknown answers only clear `answers_in_graph`.
inline QuestionInstance make_instance(std::string question_id, std::string text,
                                      std::vector<std::string> question_entities,
                                      std::vector<std::string> answers, SubgraphPtr subgraph,
                                      std::string template_id = {}) {
  QuestionInstance q;
  q.question_id = std::move(question_id);
  q.text = std::move(text);
  q.question_entity_labels = std::move(question_entities);
  q.answer_labels = std::move(answers);
  q.template_id = std::move(template_id);
  q.subgraph = std::move(subgraph);
  if (q.question_entity_labels.empty())
    throw ValidationError("question " + q.question_id + " has no question entities");
  std::set<EntityId> seen;
  for (const auto& label : q.question_entity_labels) {
    auto id = q.subgraph->find_entity(label);
    if (!id) throw ValidationError("question " + q.question_id + ": unknown question entity '" + label + "'");
    if (seen.insert(*id).second) q.question_entities.push_back(*id);
  }
  seen.clear();
  for (const auto& label : q.answer_labels) {
    auto id = q.subgraph->find_entity(label);
    if (!id) {
      q.answers_in_graph = false;
      continue;
    }
    if (seen.insert(*id).second) q.answer_entities.push_back(*id);
  }
  return q;
}

/// Parses one JSON object per line. Relative `subgraph_path` values resolve
/// against `base_dir`.
inline std::vector<QuestionInstance> parse_questions(std::istream& in,
                                                     const std::filesystem::path& base_dir = {}) {
  std::vector<QuestionInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!rec.is_object()) throw ParseError("record is not a JSON object", lineno);

    auto g = std::make_shared<KnowledgeSubgraph>();
    if (rec.contains("triples")) {
      const auto& ts = rec.at("triples");
      if (!ts.is_array()) throw ParseError("field 'triples' must be an array", lineno);
      for (const auto& t : ts) {
        if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string())
          throw ParseError("each triple must be [head, relation, tail]", lineno);
        g->add_triple(t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>());
      }
    } else if (rec.contains("subgraph_path")) {
      std::filesystem::path p = detail::string_field(rec, "subgraph_path", lineno);
      if (p.is_relative()) p = base_dir / p;
      *g = load_triples(p);
    } else {
      throw ParseError("missing field 'triples' or 'subgraph_path'", lineno);
    }

    std::string tmpl;
    if (rec.contains("template") && rec.at("template").is_string()) tmpl = rec.at("template").get<std::string>();
    out.push_back(make_instance(detail::string_field(rec, "question_id", lineno),
                                detail::string_field(rec, "text", lineno),
                                detail::string_array(rec, "question_entities", lineno),
                                detail::string_array(rec, "answer_entities", lineno), std::move(g),
                                std::move(tmpl)));
  }
  return out;
}

inline std::vector<QuestionInstance> load_questions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open questions file " + path.string());
  return parse_questions(in, path.parent_path());
}

/// Serializes an instance with its triples inline; ids are written as labels.
inline nlohmann::json question_to_json(const QuestionInstance& q) {
  nlohmann::json rec;
  rec["question_id"] = q.question_id;
  rec["text"] = q.text;
  rec["question_entities"] = q.question_entity_labels;
  rec["answer_entities"] = q.answer_labels;
  if (!q.template_id.empty()) rec["template"] = q.template_id;
  auto triples = nlohmann::json::array();
  const auto& g = q.graph();
  for (const auto& t : g.triples())
    triples.push_back({g.entity_label(t.head), g.relation_label(t.relation), g.entity_label(t.tail)});
  rec["triples"] = std::move(triples);
  return rec;
}

inline void save_questions(const std::filesystem::path& path, std::span<const QuestionInstance> qs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& q : qs) out << question_to_json(q).dump() << '\n';
}

// ---------------------------------------------------------------------------

struct ValidationReport {
  std::vector<std::string> unlinked_question_entities;
  std::vector<std::string> missing_answers;
  std::vector<std::string> isolated_question_entities;

  bool empty() const {
    return unlinked_question_entities.empty() && missing_answers.empty() && isolated_question_entities.empty();
  }
};

inline ValidationReport validate_instance(const QuestionInstance& q) {
  ValidationReport r;
  const auto& g = q.graph();
  for (const auto& label : q.question_entity_labels) {
    auto id = g.find_entity(label);
    if (!id)
      r.unlinked_question_entities.push_back(label);
    else if (g.out_degree(*id) == 0)
      r.isolated_question_entities.push_back(label);
  }
  for (const auto& label : q.answer_labels)
    if (!g.find_entity(label)) r.missing_answers.push_back(label);
  return r;
}

}  // namespace rapl
