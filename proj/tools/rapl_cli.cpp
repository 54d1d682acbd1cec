#define CPPHTTPLIB_OPENSSL_SUPPORT

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "rapl/pipeline.hpp"
#include "rapl/synthetic.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> annotator;
  std::optional<std::string> output_dir;
  std::optional<std::string> train_questions;
  std::optional<std::string> test_questions;
  std::optional<std::string> embeddings;
  std::optional<std::string> cache;
  std::optional<int> epochs;
  std::optional<std::size_t> hidden_dim;
  std::optional<double> learning_rate;
  std::optional<std::size_t> k;
  std::optional<std::size_t> m;
  std::optional<std::size_t> max_hops;
  bool dedup_first = false;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("-c,--config", o.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "global seed");
  sub->add_option("--workers", o.workers, "worker threads (0 = all cores)");
  sub->add_option("--annotator", o.annotator, "mock | external | shortest");
  sub->add_option("--output-dir", o.output_dir, "output directory");
  sub->add_option("--train-questions", o.train_questions, "training questions (JSONL)");
  sub->add_option("--test-questions", o.test_questions, "test questions (JSONL)");
  sub->add_option("--embeddings", o.embeddings, "embedding table (label<TAB>values)");
  sub->add_option("--cache", o.cache, "annotation cache (JSONL)");
  sub->add_option("--epochs", o.epochs, "training epochs");
  sub->add_option("--hidden-dim", o.hidden_dim, "hidden size H");
  sub->add_option("--lr", o.learning_rate, "Adam learning rate");
  sub->add_option("-K,--starts", o.k, "start-triple draws K");
  sub->add_option("-M,--paths", o.m, "retained paths M");
  sub->add_option("--max-hops", o.max_hops, "maximum triples per retrieved path");
  sub->add_flag("--dedup-before-truncate", o.dedup_first, "deduplicate before keeping the top M");
}

rapl::PipelineConfig resolve(const Overrides& o) {
  auto cfg = rapl::PipelineConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.workers) cfg.workers = *o.workers;
  if (o.annotator) cfg.annotator = *o.annotator;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.train_questions) cfg.train_questions = *o.train_questions;
  if (o.test_questions) cfg.test_questions = *o.test_questions;
  if (o.embeddings) cfg.embeddings = *o.embeddings;
  if (o.cache) cfg.annotation_cache = *o.cache;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.hidden_dim) cfg.train.hidden_dim = *o.hidden_dim;
  if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
  if (o.k) cfg.inference.K = *o.k;
  if (o.m) cfg.inference.M = *o.m;
  if (o.max_hops) cfg.inference.max_hops = *o.max_hops;
  if (o.dedup_first) cfg.inference.dedup_before_truncate = true;
  cfg.propagate_seed();
  cfg.validate();
  return cfg;
}

nlohmann::json brief(const rapl::PipelineConfig& cfg, const std::vector<rapl::QuestionResult>& results) {
  std::size_t paths = 0;
  for (const auto& r : results) paths += r.paths.size();
  return {{"questions", results.size()},
          {"paths", paths},
          {"results", cfg.output("results.jsonl").string()},
          {"reasoner_input", cfg.output("reasoner_input.txt").string()}};
}

int write_synthetic(const std::string& out_dir, std::uint64_t seed) {
  namespace fs = std::filesystem;
  rapl::synthetic::CorpusConfig cc;
  cc.seed = seed;
  auto corpus = rapl::synthetic::generate(cc);
  fs::create_directories(out_dir);
  rapl::save_questions(fs::path(out_dir) / "train.jsonl", corpus.train);
  rapl::save_questions(fs::path(out_dir) / "test_seen.jsonl", corpus.test_seen);
  rapl::save_questions(fs::path(out_dir) / "test_heldout.jsonl", corpus.test_unseen);
  nlohmann::json config{{"paths",
                         {{"train_questions", "train.jsonl"},
                          {"test_questions", "test_seen.jsonl"},
                          {"annotation_cache", "out/annotations.jsonl"},
                          {"output_dir", "out"}}},
                        {"annotator", "mock"},
                        {"text_dim", 128},
                        {"seed", 0},
                        {"workers", 0},
                        {"train", {{"epochs", 60}, {"hidden_dim", 64}}},
                        {"inference", {{"K", 60}, {"M", 80}}}};
  std::ofstream(fs::path(out_dir) / "config.json") << config.dump(2) << '\n';
  std::cout << nlohmann::json{{"train", corpus.train.size()},
                              {"test_seen", corpus.test_seen.size()},
                              {"test_heldout", corpus.test_unseen.size()},
                              {"dir", out_dir}}
                   .dump()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Line-graph path retriever for knowledge-graph question answering"};
  app.require_subcommand(1);
  Overrides o;

  auto* transform = app.add_subcommand("transform", "build line graphs and check edge-count identities");
  auto* label = app.add_subcommand("label", "enumerate candidates and annotate rational paths");
  auto* train = app.add_subcommand("train", "train the retriever from cached labels");
  auto* retrieve = app.add_subcommand("retrieve", "sample reasoning paths for the test questions");
  auto* eval = app.add_subcommand("eval", "compute Hit / Macro-F1 from a results file");
  auto* ablate = app.add_subcommand("ablate", "compare rational and shortest-path labeling");
  for (auto* s : {transform, label, train, retrieve, eval, ablate}) add_common(s, o);

  std::string synth_dir = "data/synthetic";
  std::uint64_t synth_seed = 2024;
  auto* synth = app.add_subcommand("synth", "write the synthetic corpus");
  synth->add_option("-o,--out", synth_dir, "output directory");
  synth->add_option("--seed", synth_seed, "corpus seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return write_synthetic(synth_dir, synth_seed);
    auto cfg = resolve(o);
    nlohmann::json out;
    if (transform->parsed()) {
      auto r = rapl::cmd_transform(cfg);
      r.erase("per_question");
      out = r;
    } else if (label->parsed()) {
      auto r = rapl::cmd_label(cfg);
      r.erase("per_question");
      out = r;
    } else if (train->parsed()) {
      out = rapl::cmd_train(cfg);
    } else if (retrieve->parsed()) {
      out = brief(cfg, rapl::cmd_retrieve(cfg));
    } else if (eval->parsed()) {
      out = rapl::cmd_eval(cfg);
    } else if (ablate->parsed()) {
      out = rapl::cmd_ablate(cfg);
    }
    std::cout << out.dump() << '\n';
    return 0;
  } catch (const rapl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
