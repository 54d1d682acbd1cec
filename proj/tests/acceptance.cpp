// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance <corpus_dir> <rapl_cli>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "rapl/pipeline.hpp"
#include "support.hpp"

using namespace rapl;
namespace ts = testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x, int prec = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << x;
  return s.str();
}

std::string sci(double x) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(3);
  s << x;
  return s.str();
}

fs::path g_corpus;
fs::path g_cli;
fs::path g_scratch;

// ---------------------------------------------------------------------------

Outcome line_graph_structure() {
  std::mt19937_64 rng(1);
  auto t0 = Clock::now();
  std::size_t bad = 0;
  for (int i = 0; i < 500; ++i) {
    auto g = ts::random_graph(rng, 15, 40);
    auto lg = build_line_graph(g);
    if (lg.node_count() != g.triple_count() || lg.edge_count() != ts::degree_product_sum(g)) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 5.0, "500 graphs, " + std::to_string(bad) + " mismatches, " + fmt(secs) + " s"};
}

Outcome path_bijection() {
  std::mt19937_64 rng(2);
  auto t0 = Clock::now();
  std::size_t mismatches = 0, roundtrip_failures = 0, paths = 0;
  for (int i = 0; i < 200; ++i) {
    auto g = ts::random_graph(rng, 8, 12);
    auto lg = build_line_graph(g);
    for (std::size_t k = 1; k <= 5; ++k)
      for (bool distinct : {false, true}) {
        auto in_g = ts::walks_in_graph(g, k, distinct);
        auto in_lg = ts::walks_in_line_graph(lg, k, distinct);
        if (in_g.size() != in_lg.size()) ++mismatches;
        for (const auto& p : in_g) {
          ++paths;
          auto lifted = lift_path(g, p);
          if (!in_lg.count(lifted) || lower_path(lg, lifted) != p) ++roundtrip_failures;
        }
      }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && roundtrip_failures == 0 && secs < 30.0,
          std::to_string(paths) + " paths, " + std::to_string(mismatches) + " count mismatches, " +
              std::to_string(roundtrip_failures) + " round-trip failures, " + fmt(secs) + " s"};
}

Outcome line_graph_distance() {
  std::mt19937_64 rng(2);
  std::size_t pairs = 0, bad = 0;
  for (int i = 0; i < 200; ++i) {
    auto g = ts::random_graph(rng, 8, 12);
    auto lg = build_line_graph(g);
    auto dl = ts::line_graph_distances(lg);
    for (std::uint32_t u = 0; u < g.entity_count(); ++u)
      for (std::uint32_t v = 0; v < g.entity_count(); ++v) {
        auto d = shortest_distance(g, EntityId(u), EntityId(v));
        if (!d || *d == 0) continue;
        ++pairs;
        std::size_t best = ts::kInf;
        for (const auto& p : shortest_path_labels(g, EntityId(u), EntityId(v), 1u << 20))
          best = std::min(best, dl[p.triples.front()][p.triples.back()]);
        if (best != *d - 1) ++bad;
      }
  }
  return {bad == 0, std::to_string(pairs) + " reachable pairs, " + std::to_string(bad) + " mismatches"};
}

Outcome gradient_gate() {
  std::mt19937_64 rng(4);
  HashEmbedding embed(8);
  auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  for (int i = 0; i < 20; ++i) {
    auto fx = ts::random_fixture(rng, embed, 12);
    Rng init(static_cast<std::uint64_t>(i));
    auto params = RetrieverParams::init(8, 16, init);
    ts::randomize(params, rng, 0.5);
    for (const auto& [name, err] : ts::finite_difference_errors(fx.example, fx.target, params, {1.0, 1.0}))
      if (err > worst) {
        worst = err;
        worst_name = name;
      }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          "20 fixtures, H=16, max relative error " + sci(worst) + " (" + worst_name + "), " + fmt(secs) +
              " s"};
}

Outcome loss_closed_forms() {
  Matrix z = Matrix::Zero(3, 4);
  RowVector zq = RowVector::Zero(4);
  std::vector<NodeId> pos{0}, neg{1, 2};
  const double lq = question_triple_loss(z, zq, pos, neg);
  auto lg = LineGraphView::from_edges(3, std::vector<std::pair<NodeId, NodeId>>{{0, 1}});
  const double lp = path_loss(lg, z, zq, std::vector<NodeId>{0}, RetrieverParams::zeros(2, 4));
  const double eq = std::abs(lq - 2.0 * std::log(2.0));
  const double ep = std::abs(lp - std::log(2.0));
  return {eq <= 1e-12 && ep <= 1e-12,
          "|L_q - 2 ln 2| = " + sci(eq) + ", |L_step - ln 2| = " + sci(ep) + " (one successor + STOP)"};
}

// ---------------------------------------------------------------------------
// Corpus-level criteria

struct Labelled {
  std::vector<QuestionInstance> questions;
  std::vector<TrainingExample> examples;
};

Labelled label_corpus(const std::vector<QuestionInstance>& questions, const EmbeddingProvider& embed,
                      bool shortest) {
  Labelled out;
  MockAnnotatorClient mock;
  AnnotationCache cache;
  for (const auto& q : questions) {
    auto cands = candidate_paths_for(q);
    if (cands.unreachable) continue;
    auto labels = shortest ? annotate_shortest(q, cands.paths, cache) : annotate(mock, q, cands.paths, cache);
    if (labels.labels.empty()) continue;
    auto rel = target_relations(mock, q, cache);
    out.questions.push_back(q);
    out.examples.push_back(make_training_example(q, embed, labels.labels, rel.relations));
  }
  return out;
}

std::vector<QuestionInstance> corpus(const char* name) { return load_questions(g_corpus / name); }

TrainConfig reference_defaults(int epochs, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.hidden_dim = 64;
  c.seed = seed;
  return c;  // lr 1e-3, batch 10, dropout 0.2, lambda 1.0
}

double greedy_recovery(const std::vector<TrainingExample>& data, const RetrieverParams& params) {
  std::size_t ok = 0;
  for (const auto& ex : data) {
    ModelPolicy policy(ex.graph, params);
    auto path = greedy_decode(policy, InferenceConfig{}.max_hops);
    ok += std::find(ex.gold_paths.begin(), ex.gold_paths.end(), path) != ex.gold_paths.end();
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

double hit_on(const std::vector<QuestionInstance>& qs, const EmbeddingProvider& embed,
              const std::function<RetrievedPathSet(const QuestionGraph&)>& run, double* mean_triples = nullptr) {
  std::vector<QuestionResult> rs;
  for (const auto& q : qs) rs.push_back(make_result(q, run(prepare_question(q, embed))));
  auto j = summary_to_json(rs);
  if (mean_triples) *mean_triples = j.at("mean_retrieved_triples").get<double>();
  return j.at("hit").get<double>();
}

RetrieverParams g_overfit_params;
bool g_have_overfit = false;

Outcome overfit_reproduction() {
  HashEmbedding embed(128);
  auto train_set = label_corpus(corpus("train.jsonl"), embed, false);
  auto t0 = Clock::now();
  const int epochs = 100;
  auto result = train(train_set.examples, reference_defaults(epochs, 0));
  const double secs = seconds_since(t0);
  const double rec = greedy_recovery(train_set.examples, result.params);
  g_overfit_params = result.params;
  g_have_overfit = true;
  return {train_set.questions.size() == 50 && rec >= 0.95 && secs < 120.0,
          std::to_string(train_set.examples.size()) + " questions, " + std::to_string(epochs) +
              " epochs, greedy recovery " + fmt(rec * 100, 1) + "%, " + fmt(secs, 1) + " s"};
}

Outcome template_generalization() {
  HashEmbedding embed(128);
  auto train_set = label_corpus(corpus("train.jsonl"), embed, false);
  auto held_out = corpus("test_heldout.jsonl");
  std::ostringstream detail;
  bool pass = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto params = train(train_set.examples, reference_defaults(50, seed)).params;
    auto cfg = InferenceConfig::preset(60, 80);
    cfg.seed = seed;
    const double model = hit_on(held_out, embed, [&](const QuestionGraph& qg) { return retrieve(params, qg, cfg); });
    const double walk = hit_on(held_out, embed, [&](const QuestionGraph& qg) { return retrieve_random_walk(qg, cfg); });
    pass = pass && model - walk >= 0.2;
    detail << (seed ? "; " : "") << "seed " << seed << ": " << fmt(model, 2) << " vs " << fmt(walk, 2);
  }
  return {pass, "held-out Hit, model vs random walk (K=60, M=80): " + detail.str()};
}

Outcome inference_contract() {
  HashEmbedding embed(128);
  if (!g_have_overfit) overfit_reproduction();
  auto qs = corpus("test_seen.jsonl");
  auto cfg = InferenceConfig::preset(60, 80);
  cfg.seed = 7;
  std::size_t max_paths = 0, nondeterministic = 0, duplicates = 0;
  std::vector<QuestionResult> rs;
  for (const auto& q : qs) {
    auto qg = prepare_question(q, embed);
    auto a = retrieve(g_overfit_params, qg, cfg);
    auto b = retrieve(g_overfit_params, qg, cfg);
    max_paths = std::max(max_paths, a.paths.size());
    std::set<ReasoningPath> uniq;
    for (const auto& p : a.paths) uniq.insert(p.path);
    duplicates += uniq.size() != a.paths.size();
    bool same = a.paths.size() == b.paths.size();
    for (std::size_t i = 0; same && i < a.paths.size(); ++i)
      same = a.paths[i].path == b.paths[i].path && a.paths[i].score == b.paths[i].score;
    nondeterministic += !same;
    rs.push_back(make_result(q, a));
  }
  auto summary = summary_to_json(rs);
  const bool reported = summary.contains("mean_retrieved_triples");
  return {max_paths <= 80 && duplicates == 0 && nondeterministic == 0 && reported,
          std::to_string(qs.size()) + " questions, max " + std::to_string(max_paths) +
              " paths, mean retrieved triples " + fmt(summary.value("mean_retrieved_triples", 0.0), 2) +
              ", nondeterministic " + std::to_string(nondeterministic)};
}

Outcome ablation_harness() {
  std::vector<double> rational, shortest;
  bool structure = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    nlohmann::json j{{"paths",
                      {{"train_questions", (g_corpus / "train.jsonl").string()},
                       {"test_questions", (g_corpus / "test_seen.jsonl").string()},
                       {"output_dir", (g_scratch / ("ablate_" + std::to_string(seed))).string()}}},
                     {"annotator", "mock"},
                     {"text_dim", 128},
                     {"seed", seed},
                     {"train", {{"epochs", 50}, {"hidden_dim", 64}}},
                     {"inference", {{"K", 60}, {"M", 80}}}};
    auto cfg = PipelineConfig::from_json(j);
    auto report = cmd_ablate(cfg);
    for (const char* s : {"rational", "shortest"})
      structure = structure && fs::exists(report["strategies"][s]["checkpoint"].get<std::string>());
    structure = structure && fs::exists(cfg.output("ablation_report.json"));
    rational.push_back(report["strategies"]["rational"]["hit"].get<double>());
    shortest.push_back(report["strategies"]["shortest"]["hit"].get<double>());
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mr = median(rational), ms = median(shortest);
  return {structure && mr >= ms,
          "two checkpoints and report per seed: " + std::string(structure ? "yes" : "no") + ", median Hit rational " +
              fmt(mr, 2) + " vs shortest-path " + fmt(ms, 2)};
}

Outcome end_to_end() {
  auto out = g_scratch / "e2e";
  auto t0 = Clock::now();
  std::string failed;
  for (const char* step : {"transform", "label", "train", "retrieve", "eval"}) {
    std::string cmd = "\"" + g_cli.string() + "\" " + step + " -c \"" + (g_corpus / "config.json").string() +
                      "\" --output-dir \"" + out.string() + "\" --cache \"" + (out / "annotations.jsonl").string() +
                      "\" > \"" + (g_scratch / (std::string(step) + ".log")).string() + "\" 2>&1";
    int rc = std::system(cmd.c_str());
    if (rc != 0) {
      failed = std::string(step) + " exited " + std::to_string(WIFEXITED(rc) ? WEXITSTATUS(rc) : rc);
      break;
    }
  }
  const double secs = seconds_since(t0);
  const bool summary = fs::exists(out / "summary.json");
  double hit = 0.0;
  if (summary) hit = nlohmann::json::parse(std::ifstream(out / "summary.json")).value("hit", 0.0);
  return {failed.empty() && summary && secs < 300.0,
          (failed.empty() ? "all five steps exited 0" : failed) + ", offline mock annotator, Hit " + fmt(hit, 2) +
              ", " + fmt(secs, 1) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: acceptance <corpus_dir> <rapl_cli>\n";
    return 2;
  }
  g_corpus = fs::absolute(argv[1]);
  g_cli = fs::absolute(argv[2]);
  g_scratch = fs::temp_directory_path() / ("rapl_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(g_scratch);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"line-graph structure", line_graph_structure},
      {"path bijection", path_bijection},
      {"line-graph distance d-1", line_graph_distance},
      {"gradient gate", gradient_gate},
      {"loss closed forms", loss_closed_forms},
      {"overfit reproduction", overfit_reproduction},
      {"template-split generalization", template_generalization},
      {"inference contract", inference_contract},
      {"annotation-strategy ablation", ablation_harness},
      {"end-to-end offline pipeline", end_to_end},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << (i + 1) << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  fs::remove_all(g_scratch);
  return failures == 0 ? 0 : 1;
}
