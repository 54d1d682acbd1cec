#pragma once

// Deterministic synthetic KGQA corpus. Each question follows a relation
// chain ("template"); its wording names the chain's keywords, so a lexical
// annotator can recover the rational path. Distractor structure:
//   * generic and off-chain relations hanging off every entity;
//   * "shortcut" paths built from relations the question never mentions,
//     reaching the answer in training questions (same length as the gold
//     chain, or one hop shorter) and reaching decoys in test questions.
// Templates are split into seen (train + seen test) and held-out chains.

#include <array>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kg_model.hpp"
#include "text.hpp"

namespace rapl::synthetic {

struct RelationSpec {
  const char* label;
  const char* keyword;
};

inline constexpr std::array<RelationSpec, 16> kChainRelations{{
    {"people.person.spouse", "spouse"},
    {"people.person.birthplace", "birthplace"},
    {"people.person.employer", "employer"},
    {"organization.organization.headquarters", "headquarters"},
    {"organization.organization.founder", "founder"},
    {"location.location.country", "country"},
    {"location.nation.capital", "capital"},
    {"film.performance.movie", "movie"},
    {"film.picture.director", "director"},
    {"music.artist.album", "album"},
    {"music.record.producer", "producer"},
    {"education.student.university", "university"},
    {"sports.athlete.team", "team"},
    {"sports.club.coach", "coach"},
    {"book.author.novel", "novel"},
    {"book.title.publisher", "publisher"},
}};

inline constexpr std::array<const char*, 6> kGenericRelations{
    "common.topic.notable_types", "base.tagit.topic",   "user.webpage.link",
    "award.nominee.honor",        "media.mention.source", "type.object.key_ref"};

inline constexpr std::array<const char*, 3> kShortcutRelations{
    "common.topic.related", "base.ontology.linked", "user.graph.association"};

struct Template {
  std::string id;
  std::vector<std::string> chain;  // relation labels, head first
  bool held_out = false;
};

inline std::vector<Template> default_templates() {
  auto t = [](std::string id, std::vector<std::string> chain, bool held_out = false) {
    return Template{std::move(id), std::move(chain), held_out};
  };
  const std::string spouse = "people.person.spouse", birthplace = "people.person.birthplace",
                    employer = "people.person.employer", hq = "organization.organization.headquarters",
                    founder = "organization.organization.founder", country = "location.location.country",
                    capital = "location.nation.capital", movie = "film.performance.movie",
                    director = "film.picture.director", album = "music.artist.album",
                    producer = "music.record.producer", university = "education.student.university",
                    team = "sports.athlete.team", coach = "sports.club.coach", novel = "book.author.novel",
                    publisher = "book.title.publisher";
  return {
      t("spouse", {spouse}),
      t("birth_country", {birthplace, country}),
      t("employer_hq", {employer, hq}),
      t("employer_founder", {employer, founder}),
      t("movie_director", {movie, director}),
      t("movie_director_birthplace", {movie, director, birthplace}),
      t("team_coach", {team, coach}),
      t("team_coach_spouse", {team, coach, spouse}),
      t("album_producer", {album, producer}),
      t("novel_publisher", {novel, publisher}),
      t("university_founder", {university, founder}),
      t("spouse_birth_country", {spouse, birthplace, country}),
      t("birth_country_capital", {birthplace, country, capital}),
      t("spouse_employer", {spouse, employer}),
      // held out: unseen compositions of seen relations
      t("spouse_employer_hq", {spouse, employer, hq}, true),
      t("movie_director_spouse", {movie, director, spouse}, true),
      t("team_coach_birthplace", {team, coach, birthplace}, true),
      t("employer_founder_spouse", {employer, founder, spouse}, true),
      t("spouse_birthplace", {spouse, birthplace}, true),
  };
}

inline std::string keyword_of(const std::string& relation) {
  for (const auto& r : kChainRelations)
    if (relation == r.label) return r.keyword;
  return relation;
}

struct CorpusConfig {
  std::size_t train = 50;
  std::size_t test_seen = 25;
  std::size_t test_unseen = 25;
  std::uint64_t seed = 2024;
};

struct Corpus {
  std::vector<QuestionInstance> train;
  std::vector<QuestionInstance> test_seen;
  std::vector<QuestionInstance> test_unseen;
};

namespace detail {

inline constexpr std::array<const char*, 24> kFirst{
    "Alma",  "Bruno", "Clara", "Dario",  "Elena", "Felix", "Greta",  "Hugo",  "Ines",  "Jonas", "Kira", "Lukas",
    "Marta", "Nils",  "Olga",  "Pavel",  "Quinn", "Rosa",  "Stefan", "Tilda", "Ugo",   "Vera",  "Wim",  "Yara"};
inline constexpr std::array<const char*, 24> kLast{
    "Abbott", "Brandt", "Castell", "Dorn",    "Esteve", "Falk",   "Gruber", "Holm",  "Iversen", "Jansen",
    "Kovacs", "Lund",   "Moreau",  "Novak",   "Ortiz",  "Petrov", "Quist",  "Rossi", "Sorensen", "Toth",
    "Ulrich", "Varga",  "Weber",   "Zeller"};
inline constexpr std::array<const char*, 32> kPlaces{
    "Aldmere", "Brackwater", "Corvin",  "Dunholt", "Elsby",   "Farrow",  "Glenmoor", "Hollin",
    "Ivel",    "Jorvik",     "Kestrel", "Larch",   "Marrow",  "Norden",  "Oskar",    "Pellham",
    "Quarry",  "Rowan",      "Selby",   "Tarn",    "Umber",   "Vantor",  "Wexley",   "Yarrow",
    "Zenna",   "Ashcombe",   "Birchby", "Caddon",  "Delford", "Emberly", "Fenwick",  "Garnet"};

class Builder {
 public:
  explicit Builder(std::mt19937_64& rng) : rng_(rng) {}

  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  bool chance(double p) { return static_cast<double>(rng_() >> 11) * 0x1.0p-53 < p; }
  std::size_t range(std::size_t lo, std::size_t hi) { return lo + pick(hi - lo + 1); }

  std::string fresh_person() { return unique(std::string(kFirst[pick(kFirst.size())]) + " " + kLast[pick(kLast.size())]); }
  std::string fresh_place() { return unique(kPlaces[pick(kPlaces.size())]); }
  std::string fresh_opaque() {
    static constexpr char kDigits[] = "0123456789abcdefghijklmnopqrstuvwxyz";
    std::string s = "m.0";
    for (int i = 0; i < 5; ++i) s += kDigits[pick(36)];
    return unique(s);
  }
  std::string fresh_entity() {
    auto r = pick(3);
    return r == 0 ? fresh_person() : r == 1 ? fresh_place() : fresh_opaque();
  }

 private:
  std::string unique(std::string base) {
    std::string s = base;
    for (int k = 2; used_.count(s); ++k) s = base + " " + std::to_string(k);
    used_.insert(s);
    return s;
  }

  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

inline std::string question_text(const Template& t, const std::string& entity, std::size_t variant) {
  std::string phrase;
  for (std::size_t i = t.chain.size(); i-- > 0;) {
    phrase += keyword_of(t.chain[i]);
    phrase += " of ";
    if (i) phrase += "the ";
  }
  phrase += entity;
  switch (variant % 3) {
    case 0: return "What is the " + phrase + "?";
    case 1: return "Name the " + phrase + ".";
    default: return "Tell me the " + phrase + ".";
  }
}

enum class Shortcut { None, SameLength, Shorter };

inline QuestionInstance make_question(const Template& t, std::string id, bool to_answer, std::mt19937_64& rng) {
  Builder b(rng);
  auto g = std::make_shared<KnowledgeSubgraph>();
  std::set<std::string> chain(t.chain.begin(), t.chain.end());
  std::vector<std::string> distractors(kGenericRelations.begin(), kGenericRelations.end());
  for (const auto& r : kChainRelations)
    if (!chain.count(r.label)) distractors.push_back(r.label);

  struct Edge {
    std::string h, r, t;
  };
  std::vector<Edge> edges;
  auto decorate = [&](const std::string& e, std::size_t lo, std::size_t hi, bool grow) {
    for (std::size_t i = 0, n = b.range(lo, hi); i < n; ++i) {
      auto tail = b.fresh_entity();
      edges.push_back({e, distractors[b.pick(distractors.size())], tail});
      if (grow)
        for (std::size_t j = 0, m = b.range(0, 2); j < m; ++j)
          edges.push_back({tail, distractors[b.pick(distractors.size())], b.fresh_entity()});
    }
  };

  const std::string topic = b.fresh_person();
  std::vector<std::string> hops{topic};
  for (std::size_t i = 0; i + 1 < t.chain.size(); ++i) hops.push_back(b.chance(0.5) ? b.fresh_opaque() : b.fresh_entity());
  const std::size_t n_answers = b.chance(0.3) ? 2 : 1;
  std::vector<std::string> answers;
  for (std::size_t i = 0; i < n_answers; ++i) answers.push_back(b.pick(2) ? b.fresh_place() : b.fresh_person());

  for (std::size_t i = 0; i + 1 < hops.size(); ++i) edges.push_back({hops[i], t.chain[i], hops[i + 1]});
  for (const auto& a : answers) edges.push_back({hops.back(), t.chain.back(), a});

  decorate(topic, 8, 12, true);
  for (std::size_t i = 1; i < hops.size(); ++i) decorate(hops[i], 3, 5, false);
  for (const auto& a : answers) decorate(a, 1, 3, false);

  // Shortcut through relations the question never mentions.
  Shortcut kind = Shortcut::None;
  if (b.chance(0.7)) kind = (t.chain.size() > 1 && b.chance(0.7)) ? Shortcut::Shorter : Shortcut::SameLength;
  if (kind != Shortcut::None) {
    const std::size_t len = kind == Shortcut::Shorter ? t.chain.size() - 1 : t.chain.size();
    const std::string target = to_answer ? answers.front() : b.fresh_place();
    std::string at = topic;
    for (std::size_t i = 0; i < len; ++i) {
      std::string next = (i + 1 == len) ? target : b.fresh_opaque();
      edges.push_back({at, kShortcutRelations[b.pick(kShortcutRelations.size())], next});
      at = next;
    }
  }

  // Shuffle so that triple ids carry no positional hint.
  for (std::size_t i = edges.size(); i > 1; --i) std::swap(edges[i - 1], edges[b.pick(i)]);
  for (const auto& e : edges) g->add_triple(e.h, e.r, e.t);

  return make_instance(std::move(id), question_text(t, topic, b.pick(3)), {topic}, answers, std::move(g), t.id);
}

}  // namespace detail

inline Corpus generate(const CorpusConfig& cfg = {}) {
  std::mt19937_64 rng(cfg.seed);
  Corpus c;
  std::vector<Template> seen, unseen;
  for (auto& t : default_templates()) (t.held_out ? unseen : seen).push_back(std::move(t));
  auto fill = [&](std::vector<QuestionInstance>& out, const std::vector<Template>& pool, std::size_t n,
                  const std::string& prefix, bool to_answer) {
    for (std::size_t i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s-%03zu", prefix.c_str(), i);
      out.push_back(detail::make_question(pool[i % pool.size()], id, to_answer, rng));
    }
  };
  fill(c.train, seen, cfg.train, "train", true);
  fill(c.test_seen, seen, cfg.test_seen, "test", false);
  fill(c.test_unseen, unseen, cfg.test_unseen, "heldout", false);
  return c;
}

}  // namespace rapl::synthetic
