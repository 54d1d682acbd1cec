#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "rapl/kg_model.hpp"
#include "support.hpp"

using namespace rapl;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rapl_kg_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(LoadTriples, TwoLines) {
  std::istringstream in("a\tr1\tb\nb\tr2\tc");
  auto g = parse_triples(in);
  EXPECT_EQ(g.entity_count(), 3u);
  EXPECT_EQ(g.relation_count(), 2u);
  EXPECT_EQ(g.triple_count(), 2u);
  EXPECT_EQ(g.entity_label(g.triple(1).head), "b");
}

TEST(LoadTriples, EmptyInput) {
  std::istringstream in("");
  auto g = parse_triples(in);
  EXPECT_EQ(g.triple_count(), 0u);
  EXPECT_EQ(g.entity_count(), 0u);
}

TEST(LoadTriples, DuplicatesKeptAsDistinctTriples) {
  std::mt19937_64 rng(7);
  std::ostringstream text;
  std::size_t lines = 0;
  for (int i = 0; i < 20; ++i) {
    std::string line = "h" + std::to_string(i % 5) + "\trel\tt" + std::to_string(i % 3);
    for (int rep = 0; rep < 3; ++rep, ++lines) text << line << '\n';
  }
  ASSERT_EQ(lines, 60u);
  std::istringstream in(text.str());
  auto g = parse_triples(in);
  EXPECT_EQ(g.triple_count(), lines);
  std::set<TripleId> ids;
  for (const auto& t : g.triples()) ids.insert(t.id);
  EXPECT_EQ(ids.size(), lines);
}

TEST(LoadTriples, WrongFieldCountReportsLine) {
  std::istringstream in("a\tr\tb\nbroken line\n");
  try {
    parse_triples(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream four("a\tr\tb\tx\n");
  EXPECT_THROW(parse_triples(four), ParseError);
}

TEST(LoadTriples, FileRoundTripOnRandomGraphs) {
  std::mt19937_64 rng(11);
  auto dir = temp_dir("roundtrip");
  for (int trial = 0; trial < 50; ++trial) {
    auto g = testing_support::random_graph(rng, 8, 25);
    auto path = dir / "g.tsv";
    save_triples(path, g);
    auto back = load_triples(path);
    // Isolated entities are not representable in TSV; compare triples.
    ASSERT_EQ(back.triple_count(), g.triple_count());
    for (std::size_t i = 0; i < g.triple_count(); ++i) {
      const auto& a = g.triple(static_cast<TripleId>(i));
      const auto& b = back.triple(static_cast<TripleId>(i));
      ASSERT_EQ(g.entity_label(a.head), back.entity_label(b.head));
      ASSERT_EQ(g.relation_label(a.relation), back.relation_label(b.relation));
      ASSERT_EQ(g.entity_label(a.tail), back.entity_label(b.tail));
    }
    ASSERT_TRUE(back.adjacency_consistent());
  }
  std::filesystem::remove_all(dir);
}

TEST(LoadTriples, LabelsWithTabsCannotBeSaved) {
  KnowledgeSubgraph g;
  g.add_triple("a\tb", "r", "c");
  std::ostringstream out;
  EXPECT_THROW(write_triples(out, g), ContractViolation);
}

TEST(Subgraph, AdjacencyConsistentAndDenseHandles) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = testing_support::random_graph(rng, 10, 30);
    ASSERT_TRUE(g.adjacency_consistent());
    std::uint32_t max_e = 0, max_r = 0;
    for (const auto& t : g.triples()) {
      max_e = std::max({max_e, t.head.value, t.tail.value});
      max_r = std::max(max_r, t.relation.value);
    }
    if (g.triple_count()) {
      ASSERT_LE(max_e + 1, g.entity_count());
      ASSERT_EQ(max_r + 1, g.relation_count());
    }
    for (std::uint32_t e = 0; e < g.entity_count(); ++e)
      ASSERT_EQ(g.find_entity(g.entity_label(EntityId{e}))->value, e);
  }
}

TEST(Subgraph, ParallelTriplesAreDistinct) {
  KnowledgeSubgraph g;
  g.add_triple("a", "r1", "b");
  g.add_triple("a", "r2", "b");
  EXPECT_EQ(g.triple_count(), 2u);
  EXPECT_EQ(g.out_degree(*g.find_entity("a")), 2u);
}

TEST(LoadQuestions, InlineTriples) {
  std::istringstream in(
      R"({"question_id":"q1","text":"What movie did Tupac star in?","question_entities":["Tupac"],)"
      R"("answer_entities":["Gridlock'd"],"triples":[["Tupac","film.actor","m.0jz0c4"],)"
      R"(["m.0jz0c4","film.performance","Gridlock'd"]]})");
  auto qs = parse_questions(in);
  ASSERT_EQ(qs.size(), 1u);
  EXPECT_EQ(qs[0].question_entities.size(), 1u);
  EXPECT_TRUE(qs[0].answers_in_graph);
  EXPECT_EQ(qs[0].graph().triple_count(), 2u);
}

TEST(LoadQuestions, AbsentAnswerIsFlagged) {
  std::istringstream in(
      R"({"question_id":"q1","text":"t","question_entities":["a"],"answer_entities":["zz"],"triples":[["a","r","b"]]})");
  auto qs = parse_questions(in);
  ASSERT_EQ(qs.size(), 1u);
  EXPECT_FALSE(qs[0].answers_in_graph);
  EXPECT_TRUE(qs[0].answer_entities.empty());
}

TEST(LoadQuestions, UnknownQuestionEntityNamesIt) {
  std::istringstream in(
      R"({"question_id":"q1","text":"t","question_entities":["ghost"],"answer_entities":[],"triples":[["a","r","b"]]})");
  try {
    parse_questions(in);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(LoadQuestions, MissingFieldIsParseError) {
  std::istringstream in(R"({"question_id":"q1","question_entities":["a"],"answer_entities":[],"triples":[]})");
  EXPECT_THROW(parse_questions(in), ParseError);
}

TEST(LoadQuestions, SubgraphPathResolvesRelativeToFile) {
  auto dir = temp_dir("subgraph");
  {
    std::ofstream(dir / "g1.tsv") << "a\tr\tb\n";
    std::ofstream(dir / "q.jsonl")
        << R"({"question_id":"q1","text":"t","question_entities":["a"],"answer_entities":["b"],"subgraph_path":"g1.tsv"})"
        << '\n';
  }
  auto qs = load_questions(dir / "q.jsonl");
  ASSERT_EQ(qs.size(), 1u);
  EXPECT_EQ(qs[0].graph().triple_count(), 1u);
  std::filesystem::remove_all(dir);
}

// Split sizes of the WebQSP benchmark (train / test).
TEST(LoadQuestions, WebQspSplitSizesRoundTrip) {
  auto dir = temp_dir("webqsp");
  for (auto [name, n] : {std::pair<const char*, std::size_t>{"train", 2826}, {"test", 1628}}) {
    std::vector<QuestionInstance> qs;
    for (std::size_t i = 0; i < n; ++i) {
      auto g = std::make_shared<KnowledgeSubgraph>();
      g->add_triple("m.0e" + std::to_string(i), "people.person.nationality", "m.09c7w0");
      qs.push_back(make_instance(std::string("WebQTrn-") + std::to_string(i), "what is the nationality?",
                                 {"m.0e" + std::to_string(i)}, {"m.09c7w0"}, g));
    }
    auto path = dir / (std::string(name) + ".jsonl");
    save_questions(path, qs);
    auto back = load_questions(path);
    ASSERT_EQ(back.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(back[i].question_id, qs[i].question_id);
      ASSERT_EQ(question_to_json(back[i]), question_to_json(qs[i]));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Validate, AllLinkedIsEmpty) {
  auto g = std::make_shared<KnowledgeSubgraph>();
  g->add_triple("a", "r", "b");
  EXPECT_TRUE(validate_instance(make_instance("q", "t", {"a"}, {"b"}, g)).empty());
}

TEST(Validate, MissingAnswer) {
  auto g = std::make_shared<KnowledgeSubgraph>();
  g->add_triple("a", "r", "b");
  auto r = validate_instance(make_instance("q", "t", {"a"}, {"zz"}, g));
  ASSERT_EQ(r.missing_answers.size(), 1u);
  EXPECT_EQ(r.missing_answers[0], "zz");
}

TEST(Validate, IsolatedQuestionEntity) {
  auto g = std::make_shared<KnowledgeSubgraph>();
  g->add_triple("a", "r", "b");
  auto r = validate_instance(make_instance("q", "t", {"b"}, {"a"}, g));
  ASSERT_EQ(r.isolated_question_entities.size(), 1u);
  EXPECT_EQ(r.isolated_question_entities[0], "b");
}
