// Builds a toy subgraph, labels it with the offline annotator, trains a small
// retriever and prints the retrieved reasoning paths.

#include <iostream>

#include "rapl/annotation.hpp"
#include "rapl/inference.hpp"

int main() {
  auto g = std::make_shared<rapl::KnowledgeSubgraph>();
  g->add_triple("Frank Herbert", "book.author.works_written", "Dune");
  g->add_triple("Frank Herbert", "people.person.place_of_birth", "Tacoma");
  g->add_triple("Dune", "book.written_work.author", "Frank Herbert");
  g->add_triple("Dune", "book.book.genre", "Science fiction");
  g->add_triple("Dune", "common.topic.related", "m.0x1");
  g->add_triple("m.0x1", "common.topic.related", "Tacoma");

  auto q = rapl::make_instance("q1", "What is the place of birth of the author of Dune?", {"Dune"}, {"Tacoma"}, g);

  auto cands = rapl::candidate_paths_for(q);
  std::cout << "candidates:\n";
  for (const auto& p : cands.paths) std::cout << "  " << rapl::serialize_path(*g, p) << '\n';

  rapl::MockAnnotatorClient annotator;
  rapl::AnnotationCache cache;  // in memory
  auto labels = rapl::annotate(annotator, q, cands.paths, cache);
  auto relations = rapl::target_relations(annotator, q, cache);
  std::cout << "rational:\n";
  for (const auto& p : labels.labels) std::cout << "  " << rapl::serialize_path(*g, p) << '\n';

  rapl::HashEmbedding embed(32);
  std::vector<rapl::TrainingExample> data{
      rapl::make_training_example(q, embed, labels.labels, relations.relations)};
  rapl::TrainConfig tc;
  tc.hidden_dim = 16;
  tc.epochs = 200;
  auto trained = rapl::train(data, tc);
  std::cout << "loss " << trained.trace.front().total << " -> " << trained.trace.back().total << '\n';

  auto set = rapl::retrieve(trained.params, data[0].graph, rapl::InferenceConfig::preset(60, 80));
  std::cout << rapl::serialize_for_reasoner(set, q);
  auto answers = rapl::answer_labels(*g, rapl::extract_answers(*g, set));
  std::cout << "answers:";
  for (const auto& a : answers) std::cout << ' ' << a;
  std::cout << '\n';
}
