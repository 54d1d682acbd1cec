#pragma once

// Rationalized path labelling and relation targeting: prompt construction,
// response parsing, an offline lexical annotator, and a JSONL cache.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kg_model.hpp"
#include "path_tools.hpp"
#include "text.hpp"

namespace rapl {

/// Raised by clients when the completion could not be obtained.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text-in, text-out completion endpoint. Implementations must not keep
/// per-call state; `id()` separates cache entries of different annotators.
class AnnotatorClient {
 public:
  virtual ~AnnotatorClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string id() const = 0;
};

// ---------------------------------------------------------------------------
// Prompts

namespace detail {

// Worked examples below are our own illustration, not taken from any dataset.
inline constexpr const char* kRationalExampleQuestion = "Which city was the author of Dune born in?";
inline constexpr const char* kRationalExamplePaths =
    "1. Dune --book.written_work.author--> Frank Herbert --people.person.place_of_birth--> Tacoma\n"
    "2. Dune --film.film.featured_filming_locations--> m.04kx2 --location.location.containedby--> Tacoma";
inline constexpr const char* kRationalExampleAnswer =
    "1. Dune --book.written_work.author--> Frank Herbert --people.person.place_of_birth--> Tacoma";
inline constexpr const char* kRationalExampleExplanation =
    "Path 1 goes from the book to its author and then to the author's place of birth, which is exactly "
    "what the question asks for. Path 2 reaches the same city through a filming location of an "
    "adaptation; it connects the entities but says nothing about where the author was born.";

inline constexpr const char* kRelationExampleQuestion = "Which city was the author of Dune born in?";
inline constexpr const char* kRelationExampleEntity = "Dune";
inline constexpr const char* kRelationExampleRelations =
    "book.written_work.author, book.book.genre, film.film.featured_filming_locations, "
    "people.person.place_of_birth";
inline constexpr const char* kRelationExampleAnswer = "book.written_work.author, people.person.place_of_birth";

inline constexpr const char* kRelationTaskMarker = "List the possible relations for this question.";
inline constexpr const char* kRationalTaskMarker = "Identify all the rational paths, and list below, with explanations:";

inline std::string question_entity_text(const QuestionInstance& q) {
  return text::join(q.question_entity_labels, ", ");
}

}  // namespace detail

inline std::string build_rational_path_prompt(const QuestionInstance& q, const std::vector<ReasoningPath>& cands) {
  if (cands.empty()) throw ContractViolation("build_rational_path_prompt: no candidate paths");
  std::ostringstream s;
  s << "Example\n\n"
    << "Given a question <" << detail::kRationalExampleQuestion << ">, the reasoning paths are:\n\n"
    << detail::kRationalExamplePaths << "\n\n"
    << "The rational paths are:\n\n"
    << detail::kRationalExampleAnswer << "\n\n"
    << "Explanation\n\n"
    << detail::kRationalExampleExplanation << "\n\n"
    << "Task\n\n"
    << "Now given question <" << q.text << ">, the reasoning paths are:\n\n";
  for (std::size_t i = 0; i < cands.size(); ++i) s << (i + 1) << ". " << serialize_path(q.graph(), cands[i]) << '\n';
  s << '\n' << detail::kRationalTaskMarker << '\n';
  return s.str();
}

/// Relations sorted by label so the prompt is stable.
inline std::vector<RelationId> sorted_relations(const KnowledgeSubgraph& g, const std::set<RelationId>& rels) {
  std::vector<RelationId> v(rels.begin(), rels.end());
  std::sort(v.begin(), v.end(),
            [&](RelationId a, RelationId b) { return g.relation_label(a) < g.relation_label(b); });
  return v;
}

inline std::set<RelationId> all_relations(const KnowledgeSubgraph& g) {
  std::set<RelationId> out;
  for (std::uint32_t r = 0; r < g.relation_count(); ++r) out.insert(RelationId(r));
  return out;
}

inline std::string build_relation_targeting_prompt(const QuestionInstance& q, const std::set<RelationId>& relations) {
  const auto& g = q.graph();
  std::vector<std::string> labels;
  for (auto r : sorted_relations(g, relations)) labels.push_back(g.relation_label(r));
  std::ostringstream s;
  s << "Example\n\n"
    << "Given a question <" << detail::kRelationExampleQuestion << ">, the question entity is: <"
    << detail::kRelationExampleEntity << ">, the candidate relations for <" << detail::kRelationExampleEntity
    << "> are: <" << detail::kRelationExampleRelations << ">. The possible relations for this question are:\n\n"
    << detail::kRelationExampleAnswer << "\n\n"
    << "Task\n\n"
    << "Now given question <" << q.text << ">, question entity: <" << detail::question_entity_text(q)
    << ">, relations with the entity: <" << text::join(labels, ", ") << ">. " << detail::kRelationTaskMarker
    << '\n';
  return s.str();
}

// ---------------------------------------------------------------------------
// Response parsing

struct ParsedSelection {
  std::set<std::size_t> indices;  // zero-based
  bool parse_failed = false;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// "1. ", "2) ", "- ", "* ", "Path 3: " style prefixes.
inline std::string strip_list_marker(const std::string& line) {
  static const std::regex marker(R"(^\s*(?:[-*]\s*)?(?:(?:path\s*)?#?\d+\s*[.):]\s*)?)", std::regex::icase);
  return text::trim(std::regex_replace(line, marker, "", std::regex_constants::format_first_only));
}

}  // namespace detail

/// Extracts the selected candidates. Lines that repeat a candidate verbatim
/// win; otherwise 1-based numbers in list form ("1, 3", "Path 2", "2. ...")
/// are read up to the first explanation heading.
inline ParsedSelection parse_rational_response(const std::string& response, std::size_t n_candidates,
                                               const std::vector<std::string>& serialized = {}) {
  ParsedSelection out;
  std::vector<std::string> lines;
  {
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }

  if (!serialized.empty()) {
    std::multimap<std::string, std::size_t> lookup;
    for (std::size_t i = 0; i < serialized.size(); ++i) lookup.emplace(serialized[i], i);
    static const std::regex leading(R"(^\s*(?:[-*]\s*)?(\d+)\s*[.):])");
    for (const auto& line : lines) {
      auto text = detail::strip_list_marker(line);
      auto [lo, hi] = lookup.equal_range(text);
      if (lo == hi) continue;
      std::smatch m;
      if (std::regex_search(line, m, leading)) {
        auto n = std::stoul(m[1].str());
        if (n >= 1 && n <= serialized.size() && serialized[n - 1] == text) {
          out.indices.insert(n - 1);
          continue;
        }
      }
      for (auto it = lo; it != hi; ++it) out.indices.insert(it->second);
    }
    if (!out.indices.empty()) return out;
  }

  static const std::regex number_list(
      R"(^\s*(?:path\s*)?#?(\d+)(?:\s*(?:,|;|and|&|\s)\s*(?:path\s*)?#?\d+)*\s*\.?\s*$)", std::regex::icase);
  static const std::regex enumerated(R"(^\s*(?:[-*]\s*)?(?:path\s*)?#?(\d+)\s*[.):]\s+\S)", std::regex::icase);
  static const std::regex integer(R"(\d+)");

  std::vector<long> picked;
  for (const auto& raw : lines) {
    auto low = detail::lower(raw);
    if (low.find("explanation") != std::string::npos) break;
    std::string body = raw;
    auto colon = raw.find(':');
    if (colon != std::string::npos && low.substr(0, colon).find("path") != std::string::npos &&
        std::none_of(raw.begin(), raw.begin() + static_cast<long>(colon), ::isdigit))
      body = raw.substr(colon + 1);
    std::smatch m;
    if (std::regex_match(body, m, number_list)) {
      for (std::sregex_iterator it(body.begin(), body.end(), integer), end; it != end; ++it)
        picked.push_back(std::stol(it->str()));
    } else if (std::regex_search(body, m, enumerated)) {
      picked.push_back(std::stol(m[1].str()));
    }
  }
  for (long v : picked) {
    if (v < 1 || static_cast<std::size_t>(v) > n_candidates) {
      out.warnings.push_back("index " + std::to_string(v) + " out of range 1.." + std::to_string(n_candidates));
      continue;
    }
    out.indices.insert(static_cast<std::size_t>(v - 1));
  }
  out.parse_failed = out.indices.empty();
  return out;
}

/// Relation labels of `g` that appear as whole tokens in the response.
inline std::set<RelationId> parse_relation_response(const std::string& response, const KnowledgeSubgraph& g) {
  std::set<RelationId> out;
  static const std::regex token(R"([A-Za-z0-9_.:/\-]+)");
  for (std::sregex_iterator it(response.begin(), response.end(), token), end; it != end; ++it) {
    std::string t = it->str();
    while (!t.empty() && (t.back() == '.' || t.back() == ':')) t.pop_back();
    if (auto r = g.find_relation(t)) out.insert(*r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Offline lexical annotator

namespace detail {

inline std::set<std::string> relation_tokens(const KnowledgeSubgraph& g, const ReasoningPath& p) {
  std::set<std::string> out;
  for (auto r : relation_path(g, p)) {
    auto t = text::content_tokens(g.relation_label(r));
    out.insert(t.begin(), t.end());
  }
  return out;
}

inline std::size_t overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  for (const auto& x : a) n += b.count(x);
  return n;
}

}  // namespace detail

/// Scores each candidate by how many distinct relation tokens also occur in
/// the question and returns every candidate with the top score.
inline std::set<std::size_t> mock_annotate(const QuestionInstance& q, const std::vector<ReasoningPath>& cands) {
  auto question = text::content_tokens(q.text);
  std::vector<std::size_t> scores;
  std::size_t best = 0;
  for (const auto& p : cands) {
    scores.push_back(detail::overlap(detail::relation_tokens(q.graph(), p), question));
    best = std::max(best, scores.back());
  }
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (scores[i] == best) out.insert(i);
  return out;
}

/// Relations sharing at least one content token with the question.
inline std::set<RelationId> mock_target_relations(const std::string& question_text, const KnowledgeSubgraph& g,
                                                  const std::set<RelationId>& relations) {
  auto question = text::content_tokens(question_text);
  std::set<RelationId> out;
  for (auto r : relations)
    if (detail::overlap(text::content_tokens(g.relation_label(r)), question) > 0) out.insert(r);
  return out;
}

/// AnnotatorClient that answers both prompt kinds with the lexical rule by
/// reading the task block back out of the prompt.
class MockAnnotatorClient : public AnnotatorClient {
 public:
  std::string id() const override { return "mock-lexical"; }

  std::string complete(const std::string& prompt) override {
    auto task = prompt.find("\nTask\n");
    if (task == std::string::npos) return "I could not find a task in the prompt.";
    auto question = between(prompt, "Now given question <", ">,", task);
    auto qtokens = text::content_tokens(question);

    if (prompt.find(detail::kRelationTaskMarker, task) != std::string::npos) {
      auto rels = between(prompt, "relations with the entity: <", ">. ", task);
      std::vector<std::string> chosen;
      std::istringstream in(rels);
      std::string r;
      while (std::getline(in, r, ',')) {
        r = text::trim(r);
        if (!r.empty() && detail::overlap(text::content_tokens(r), qtokens) > 0) chosen.push_back(r);
      }
      return chosen.empty() ? "None of the relations are relevant." : text::join(chosen, ", ");
    }

    auto body = prompt.substr(prompt.find("the reasoning paths are:", task));
    std::istringstream in(body);
    std::string line;
    std::vector<std::string> paths;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.find(detail::kRationalTaskMarker) != std::string::npos) break;
      auto stripped = detail::strip_list_marker(line);
      if (!stripped.empty()) paths.push_back(stripped);
    }
    std::vector<std::size_t> scores;
    std::size_t best = 0;
    for (const auto& p : paths) {
      std::set<std::string> rtoks;
      if (auto parsed = parse_path_text(p))
        for (const auto& r : parsed->relations) {
          auto t = text::content_tokens(r);
          rtoks.insert(t.begin(), t.end());
        }
      scores.push_back(detail::overlap(rtoks, qtokens));
      best = std::max(best, scores.back());
    }
    std::ostringstream out;
    out << "The rational paths are:\n\n";
    for (std::size_t i = 0; i < paths.size(); ++i)
      if (scores[i] == best) out << (i + 1) << ". " << paths[i] << '\n';
    out << "\nExplanations:\n\nThe listed paths use the relations that share the most terms with the question.\n";
    return out.str();
  }

 private:
  static std::string between(const std::string& s, const std::string& open, const std::string& close,
                             std::size_t from) {
    auto a = s.find(open, from);
    if (a == std::string::npos) return {};
    a += open.size();
    auto b = s.find(close, a);
    return s.substr(a, b == std::string::npos ? std::string::npos : b - a);
  }
};

/// Decorator that appends every prompt/response pair to a transcript file.
class TranscriptClient : public AnnotatorClient {
 public:
  TranscriptClient(AnnotatorClient& inner, std::filesystem::path transcript)
      : inner_(inner), path_(std::move(transcript)) {}

  std::string id() const override { return inner_.id(); }

  std::string complete(const std::string& prompt) override {
    auto response = inner_.complete(prompt);
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    out << nlohmann::json{{"annotator", inner_.id()}, {"prompt", prompt}, {"response", response}}.dump() << '\n';
    return response;
  }

 private:
  AnnotatorClient& inner_;
  std::filesystem::path path_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Cache

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct AnnotationRecord {
  std::string kind = "rational";  // "rational" or "relations"
  std::string question_id;
  std::string annotator_id;
  std::vector<std::string> candidates;                // serialized candidate paths
  std::vector<std::vector<TripleId>> candidate_triples;
  std::vector<std::size_t> rational;                  // zero-based indices into candidates
  std::vector<std::string> relations;                 // R_* labels, kind == "relations"
  std::string raw_response;
  std::string timestamp;
  bool fallback = false;

  nlohmann::json to_json() const {
    return {{"kind", kind},
            {"question_id", question_id},
            {"annotator_id", annotator_id},
            {"candidates", candidates},
            {"candidate_triples", candidate_triples},
            {"rational", rational},
            {"relations", relations},
            {"raw_response", raw_response},
            {"timestamp", timestamp},
            {"fallback", fallback}};
  }

  static AnnotationRecord from_json(const nlohmann::json& j) {
    AnnotationRecord r;
    r.kind = j.value("kind", std::string("rational"));
    r.question_id = j.at("question_id").get<std::string>();
    r.annotator_id = j.at("annotator_id").get<std::string>();
    r.candidates = j.value("candidates", std::vector<std::string>{});
    r.candidate_triples = j.value("candidate_triples", std::vector<std::vector<TripleId>>{});
    r.rational = j.value("rational", std::vector<std::size_t>{});
    r.relations = j.value("relations", std::vector<std::string>{});
    r.raw_response = j.value("raw_response", std::string{});
    r.timestamp = j.value("timestamp", std::string{});
    r.fallback = j.value("fallback", false);
    for (auto i : r.rational)
      if (i >= r.candidates.size()) throw ParseError("annotation record has rational index out of range");
    return r;
  }
};

/// Append-only JSONL store keyed by (kind, question_id, annotator_id). An
/// empty path keeps the cache in memory only. Later lines win on reload.
class AnnotationCache {
 public:
  AnnotationCache() = default;
  explicit AnnotationCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      try {
        auto rec = AnnotationRecord::from_json(nlohmann::json::parse(line));
        records_[key(rec.kind, rec.question_id, rec.annotator_id)] = std::move(rec);
      } catch (const std::exception& e) {
        // A torn final line from an interrupted run is skipped.
        std::cerr << "warning: skipping cache line " << lineno << " of " << path_ << ": " << e.what() << '\n';
      }
    }
  }

  std::optional<AnnotationRecord> get(const std::string& kind, const std::string& question_id,
                                      const std::string& annotator_id) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(key(kind, question_id, annotator_id));
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  void put(const AnnotationRecord& rec) {
    std::lock_guard lock(mu_);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw std::runtime_error("cannot append to annotation cache " + path_.string());
      out << rec.to_json().dump() << '\n';
      out.flush();
    }
    records_[key(rec.kind, rec.question_id, rec.annotator_id)] = rec;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

 private:
  static std::string key(const std::string& kind, const std::string& q, const std::string& a) {
    return kind + '\x1f' + q + '\x1f' + a;
  }

  std::filesystem::path path_;
  std::map<std::string, AnnotationRecord> records_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------

struct AnnotateOptions {
  int max_attempts = 3;
};

struct AnnotationOutcome {
  std::vector<ReasoningPath> labels;
  bool cache_hit = false;
  bool fallback = false;       // shortest-path labels were substituted
  bool parse_failed = false;
  bool transport_failed = false;
  std::size_t client_calls = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<ReasoningPath> pick(const std::vector<ReasoningPath>& cands, const std::vector<std::size_t>& idx) {
  std::vector<ReasoningPath> out;
  for (auto i : idx) out.push_back(cands.at(i));
  return out;
}

}  // namespace detail

/// Labels one question: cached selection if present, otherwise one client
/// call (retried on transport errors). An empty selection falls back to the
/// shortest-path labels. The result is always a subset of `cands`.
inline AnnotationOutcome annotate(AnnotatorClient& client, const QuestionInstance& q,
                                  const std::vector<ReasoningPath>& cands, AnnotationCache& cache,
                                  const AnnotateOptions& opts = {}) {
  AnnotationOutcome out;
  const auto& g = q.graph();
  auto fallback = [&] {
    out.fallback = true;
    auto sp = shortest_labels_for(q);
    std::set<ReasoningPath> allowed(cands.begin(), cands.end());
    for (auto& p : sp)
      if (allowed.count(p)) out.labels.push_back(std::move(p));
  };
  if (cands.empty()) {
    out.fallback = true;
    return out;
  }

  std::vector<std::string> serialized;
  for (const auto& p : cands) serialized.push_back(serialize_path(g, p));

  if (auto rec = cache.get("rational", q.question_id, client.id()); rec && rec->candidates == serialized) {
    out.cache_hit = true;
    out.labels = detail::pick(cands, rec->rational);
    if (out.labels.empty()) fallback();
    return out;
  }

  auto prompt = build_rational_path_prompt(q, cands);
  std::optional<std::string> response;
  for (int attempt = 0; attempt < opts.max_attempts && !response; ++attempt) {
    ++out.client_calls;
    try {
      response = client.complete(prompt);
    } catch (const TransportError& e) {
      out.warnings.push_back(std::string("transport error: ") + e.what());
    }
  }
  if (!response) {
    out.transport_failed = true;
    fallback();
    return out;
  }

  auto parsed = parse_rational_response(*response, cands.size(), serialized);
  out.parse_failed = parsed.parse_failed;
  out.warnings.insert(out.warnings.end(), parsed.warnings.begin(), parsed.warnings.end());

  AnnotationRecord rec;
  rec.question_id = q.question_id;
  rec.annotator_id = client.id();
  rec.candidates = serialized;
  for (const auto& p : cands) rec.candidate_triples.push_back(p.triples);
  rec.rational.assign(parsed.indices.begin(), parsed.indices.end());
  rec.raw_response = *response;
  rec.timestamp = utc_timestamp();
  rec.fallback = parsed.indices.empty();
  cache.put(rec);

  out.labels = detail::pick(cands, rec.rational);
  if (out.labels.empty()) fallback();
  return out;
}

/// Stores shortest-path labels under the pseudo-annotator "shortest-path",
/// the heuristic baseline strategy.
inline AnnotationOutcome annotate_shortest(const QuestionInstance& q, const std::vector<ReasoningPath>& cands,
                                           AnnotationCache& cache) {
  AnnotationOutcome out;
  const auto& g = q.graph();
  std::vector<std::string> serialized;
  for (const auto& p : cands) serialized.push_back(serialize_path(g, p));
  if (auto rec = cache.get("rational", q.question_id, "shortest-path"); rec && rec->candidates == serialized) {
    out.cache_hit = true;
    out.labels = detail::pick(cands, rec->rational);
    return out;
  }
  auto sp = shortest_labels_for(q);
  std::set<ReasoningPath> chosen(sp.begin(), sp.end());
  AnnotationRecord rec;
  rec.question_id = q.question_id;
  rec.annotator_id = "shortest-path";
  rec.candidates = serialized;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    rec.candidate_triples.push_back(cands[i].triples);
    if (chosen.count(cands[i])) rec.rational.push_back(i);
  }
  rec.timestamp = utc_timestamp();
  cache.put(rec);
  out.labels = detail::pick(cands, rec.rational);
  return out;
}

struct RelationTargetSet {
  std::string question_id;
  std::set<RelationId> relations;
  bool cache_hit = false;
  std::size_t client_calls = 0;
};

/// R_*: annotator-selected relations, always a subset of the subgraph's.
inline RelationTargetSet target_relations(AnnotatorClient& client, const QuestionInstance& q, AnnotationCache& cache,
                                          const AnnotateOptions& opts = {}) {
  RelationTargetSet out;
  out.question_id = q.question_id;
  const auto& g = q.graph();
  if (auto rec = cache.get("relations", q.question_id, client.id())) {
    out.cache_hit = true;
    for (const auto& label : rec->relations)
      if (auto r = g.find_relation(label)) out.relations.insert(*r);
    return out;
  }
  auto rels = all_relations(g);
  if (rels.empty()) return out;

  auto prompt = build_relation_targeting_prompt(q, rels);
  std::optional<std::string> response;
  for (int attempt = 0; attempt < opts.max_attempts && !response; ++attempt) {
    ++out.client_calls;
    try {
      response = client.complete(prompt);
    } catch (const TransportError&) {
    }
  }
  if (!response) return out;
  out.relations = parse_relation_response(*response, g);

  AnnotationRecord rec;
  rec.kind = "relations";
  rec.question_id = q.question_id;
  rec.annotator_id = client.id();
  for (auto r : sorted_relations(g, out.relations)) rec.relations.push_back(g.relation_label(r));
  rec.raw_response = *response;
  rec.timestamp = utc_timestamp();
  cache.put(rec);
  return out;
}

}  // namespace rapl
