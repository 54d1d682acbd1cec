#pragma once

// Path retriever over the directed line graph.
//
//   h0      = phi(triple) * W_in                       (phi = [e_head | e_rel | e_tail])
//   h^(l)   = ReLU( mean_{j in N_in(i)} h_j^(l-1) W_agg + h_i^(l-1) W_self ),  l = 1, 2
//   z       = (z_forward + z_backward) / 2             (stacks on l(G) and its reverse)
//   z_q     = e_question * W_q
//   stop    = MLP([sum of prefix z | z_q])
//
// Step logits are <z_q, z_candidate>; STOP competes in every step. Gradients
// are computed analytically; everything runs in double precision.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "embedding.hpp"
#include "kg_model.hpp"
#include "line_graph.hpp"
#include "path_tools.hpp"

namespace rapl {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using SparseOperator = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Rng = std::mt19937_64;

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

// ---------------------------------------------------------------------------
// Parameters

struct GcnLayerParams {
  Matrix w_agg;
  Matrix w_self;
};

struct GcnStackParams {
  std::array<GcnLayerParams, 2> layers;
};

struct StopHeadParams {
  Matrix w1;  // 2H x H
  Matrix b1;  // 1 x H
  Matrix w2;  // H x H
  Matrix b2;  // 1 x H
};

struct RetrieverParams {
  Matrix input_proj;     // 3D x H
  Matrix question_proj;  // D x H
  GcnStackParams forward;
  GcnStackParams backward;
  StopHeadParams stop;

  std::size_t text_dim() const { return static_cast<std::size_t>(question_proj.rows()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(question_proj.cols()); }

  /// Named views over every tensor, in a fixed order.
  std::vector<std::pair<std::string, Matrix*>> tensors() {
    std::vector<std::pair<std::string, Matrix*>> out{{"input_proj", &input_proj}, {"question_proj", &question_proj}};
    for (auto [name, stack] : {std::pair{"forward", &forward}, std::pair{"backward", &backward}})
      for (std::size_t l = 0; l < 2; ++l) {
        auto prefix = std::string(name) + ".layer" + std::to_string(l);
        out.emplace_back(prefix + ".w_agg", &stack->layers[l].w_agg);
        out.emplace_back(prefix + ".w_self", &stack->layers[l].w_self);
      }
    out.emplace_back("stop.w1", &stop.w1);
    out.emplace_back("stop.b1", &stop.b1);
    out.emplace_back("stop.w2", &stop.w2);
    out.emplace_back("stop.b2", &stop.b2);
    return out;
  }

  std::vector<std::pair<std::string, const Matrix*>> tensors() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (auto& [n, m] : const_cast<RetrieverParams*>(this)->tensors()) out.emplace_back(n, m);
    return out;
  }

  static RetrieverParams zeros(std::size_t text_dim, std::size_t hidden) {
    const auto d = static_cast<Eigen::Index>(text_dim);
    const auto h = static_cast<Eigen::Index>(hidden);
    RetrieverParams p;
    p.input_proj = Matrix::Zero(3 * d, h);
    p.question_proj = Matrix::Zero(d, h);
    for (auto* s : {&p.forward, &p.backward})
      for (auto& l : s->layers) {
        l.w_agg = Matrix::Zero(h, h);
        l.w_self = Matrix::Zero(h, h);
      }
    p.stop = {Matrix::Zero(2 * h, h), Matrix::Zero(1, h), Matrix::Zero(h, h), Matrix::Zero(1, h)};
    return p;
  }

  RetrieverParams zeros_like() const { return zeros(text_dim(), hidden_dim()); }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases use the fan-in of their layer.
  static RetrieverParams init(std::size_t text_dim, std::size_t hidden, Rng& rng) {
    auto p = zeros(text_dim, hidden);
    auto fill = [&](Matrix& m, Eigen::Index fan_in) {
      const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * a;
    };
    fill(p.input_proj, p.input_proj.rows());
    fill(p.question_proj, p.question_proj.rows());
    for (auto* s : {&p.forward, &p.backward})
      for (auto& l : s->layers) {
        fill(l.w_agg, l.w_agg.rows());
        fill(l.w_self, l.w_self.rows());
      }
    fill(p.stop.w1, p.stop.w1.rows());
    fill(p.stop.b1, p.stop.w1.rows());
    fill(p.stop.w2, p.stop.w2.rows());
    fill(p.stop.b2, p.stop.w2.rows());
    return p;
  }

  friend bool operator==(const RetrieverParams& a, const RetrieverParams& b) {
    auto ta = a.tensors();
    auto tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
      const Matrix& x = *ta[i].second;
      const Matrix& y = *tb[i].second;
      if (x.rows() != y.rows() || x.cols() != y.cols() || x != y) return false;
    }
    return true;
  }

  RetrieverParams& operator+=(const RetrieverParams& o) {
    auto mine = tensors();
    auto theirs = o.tensors();
    for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].second += *theirs[i].second;
    return *this;
  }

  RetrieverParams& operator*=(double s) {
    for (auto& [n, m] : tensors()) *m *= s;
    return *this;
  }
};

// Checkpoint: JSON of named tensors, doubles printed round-trip exact.
inline nlohmann::json params_to_json(const RetrieverParams& p) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, m] : p.tensors()) {
    std::vector<double> data(m->data(), m->data() + m->size());
    tensors[name] = {{"rows", m->rows()}, {"cols", m->cols()}, {"data", std::move(data)}};
  }
  return {{"format", "rapl-retriever"},
          {"version", 1},
          {"text_dim", p.text_dim()},
          {"hidden_dim", p.hidden_dim()},
          {"tensors", std::move(tensors)}};
}

inline RetrieverParams params_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "rapl-retriever" || j.value("version", 0) != 1)
    throw ParseError("not a version-1 retriever checkpoint");
  auto p = RetrieverParams::zeros(j.at("text_dim").get<std::size_t>(), j.at("hidden_dim").get<std::size_t>());
  for (auto& [name, m] : p.tensors()) {
    if (!j.at("tensors").contains(name)) throw ParseError("checkpoint lacks tensor " + name);
    const auto& t = j.at("tensors").at(name);
    if (t.at("rows").get<Eigen::Index>() != m->rows() || t.at("cols").get<Eigen::Index>() != m->cols())
      throw ParseError("checkpoint tensor " + name + " has the wrong shape");
    auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != m->size()) throw ParseError("checkpoint tensor " + name + " is truncated");
    std::copy(data.begin(), data.end(), m->data());
  }
  return p;
}

/// Writes to a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_params(const std::filesystem::path& path, const RetrieverParams& p) {
  write_file_atomic(path, params_to_json(p).dump() + "\n");
}

inline RetrieverParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  return params_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Features and per-question graph data

/// phi(e, r, e') = [embed(head) | embed(relation) | embed(tail)].
inline Vector triple_feature(const KnowledgeSubgraph& g, const Triple& t, const EmbeddingProvider& provider) {
  const auto d = static_cast<Eigen::Index>(provider.dim());
  Vector f(3 * d);
  f.segment(0, d) = provider.embed(g.entity_label(t.head));
  f.segment(d, d) = provider.embed(g.relation_label(t.relation));
  f.segment(2 * d, d) = provider.embed(g.entity_label(t.tail));
  return f;
}

/// Row-normalized in-neighbour mean: (A h)_i = mean_{j in pred(i)} h_j.
inline SparseOperator mean_in_operator(const LineGraphView& lg) {
  const auto n = static_cast<Eigen::Index>(lg.node_count());
  std::vector<Eigen::Triplet<double>> entries;
  for (NodeId i = 0; i < lg.node_count(); ++i) {
    auto preds = lg.predecessors(i);
    for (NodeId j : preds) entries.emplace_back(i, j, 1.0 / static_cast<double>(preds.size()));
  }
  SparseOperator a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());
  return a;
}

/// Everything the model needs about one question, independent of labels.
struct QuestionGraph {
  std::string question_id;
  SubgraphPtr graph;
  LineGraphView lg;
  LineGraphView rev;
  SparseOperator forward_op;
  SparseOperator backward_op;
  Matrix features;                // N x 3D
  RowVector question_embedding;   // 1 x D
  std::vector<NodeId> start_candidates;  // V_cand: triples headed by a question entity

  std::size_t node_count() const { return lg.node_count(); }
};

inline QuestionGraph prepare_question(const QuestionInstance& q, const EmbeddingProvider& provider) {
  QuestionGraph qg;
  qg.question_id = q.question_id;
  qg.graph = q.subgraph;
  const auto& g = *q.subgraph;
  qg.lg = build_line_graph(g);
  qg.rev = reverse(qg.lg);
  qg.forward_op = mean_in_operator(qg.lg);
  qg.backward_op = mean_in_operator(qg.rev);
  const auto d = static_cast<Eigen::Index>(provider.dim());
  qg.features.resize(static_cast<Eigen::Index>(g.triple_count()), 3 * d);
  std::vector<Vector> entity_cache(g.entity_count());
  std::vector<Vector> relation_cache(g.relation_count());
  auto ent = [&](EntityId e) -> const Vector& {
    auto& v = entity_cache[e.value];
    if (v.size() == 0) v = provider.embed(g.entity_label(e));
    return v;
  };
  for (const auto& t : g.triples()) {
    auto& r = relation_cache[t.relation.value];
    if (r.size() == 0) r = provider.embed(g.relation_label(t.relation));
    auto row = qg.features.row(static_cast<Eigen::Index>(t.id));
    row.segment(0, d) = ent(t.head).transpose();
    row.segment(d, d) = r.transpose();
    row.segment(2 * d, d) = ent(t.tail).transpose();
  }
  qg.question_embedding = provider.embed(q.text).transpose();
  std::set<NodeId> starts;
  for (auto e : q.question_entities)
    for (auto t : g.out_triples(e)) starts.insert(t);
  qg.start_candidates.assign(starts.begin(), starts.end());
  return qg;
}

// ---------------------------------------------------------------------------
// Encoder

enum class Mode { Train, Eval };

/// One graph-convolution layer: ReLU(A h W_agg + h W_self).
inline Matrix gcn_layer(const SparseOperator& a, const Matrix& h, const GcnLayerParams& p) {
  Matrix pre = (a * h) * p.w_agg + h * p.w_self;
  return pre.cwiseMax(0.0);
}

/// Inverted-dropout masks for the two layer inputs of each stack. Empty means none.
struct DropoutMasks {
  std::array<Matrix, 2> forward;
  std::array<Matrix, 2> backward;

  bool empty() const { return forward[0].size() == 0; }

  static DropoutMasks sample(Eigen::Index n, Eigen::Index h, double rate, Rng& rng) {
    DropoutMasks m;
    if (rate <= 0.0) return m;
    const double keep = 1.0 - rate;
    for (auto* stack : {&m.forward, &m.backward})
      for (auto& mask : *stack) {
        mask.resize(n, h);
        for (Eigen::Index j = 0; j < h; ++j)
          for (Eigen::Index i = 0; i < n; ++i) mask(i, j) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
      }
    return m;
  }
};

struct StackState {
  Matrix input, agg0, pre1, h1, agg1, pre2, out;
};

struct EncoderState {
  Matrix projected;  // X W_in
  StackState forward, backward;
  Matrix z;
};

namespace detail {

inline StackState run_stack(const SparseOperator& a, const Matrix& h0, const GcnStackParams& p,
                            const std::array<Matrix, 2>* masks) {
  StackState s;
  s.input = masks ? h0.cwiseProduct((*masks)[0]) : h0;
  s.agg0 = a * s.input;
  s.pre1 = s.agg0 * p.layers[0].w_agg + s.input * p.layers[0].w_self;
  s.h1 = s.pre1.cwiseMax(0.0);
  if (masks) s.h1 = s.h1.cwiseProduct((*masks)[1]);
  s.agg1 = a * s.h1;
  s.pre2 = s.agg1 * p.layers[1].w_agg + s.h1 * p.layers[1].w_self;
  s.out = s.pre2.cwiseMax(0.0);
  return s;
}

inline Matrix relu_grad(const Matrix& upstream, const Matrix& pre) {
  return upstream.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
}

// Returns d loss / d h0.
inline Matrix backprop_stack(const SparseOperator& a, const StackState& s, const GcnStackParams& p,
                             const std::array<Matrix, 2>* masks, const Matrix& d_out, GcnStackParams& grad) {
  Matrix d_pre2 = relu_grad(d_out, s.pre2);
  grad.layers[1].w_agg.noalias() += s.agg1.transpose() * d_pre2;
  grad.layers[1].w_self.noalias() += s.h1.transpose() * d_pre2;
  Matrix d_h1 = a.transpose() * (d_pre2 * p.layers[1].w_agg.transpose()) + d_pre2 * p.layers[1].w_self.transpose();
  if (masks) d_h1 = d_h1.cwiseProduct((*masks)[1]);
  Matrix d_pre1 = relu_grad(d_h1, s.pre1);
  grad.layers[0].w_agg.noalias() += s.agg0.transpose() * d_pre1;
  grad.layers[0].w_self.noalias() += s.input.transpose() * d_pre1;
  Matrix d_in = a.transpose() * (d_pre1 * p.layers[0].w_agg.transpose()) + d_pre1 * p.layers[0].w_self.transpose();
  if (masks) d_in = d_in.cwiseProduct((*masks)[0]);
  return d_in;
}

}  // namespace detail

inline EncoderState encode_state(const SparseOperator& forward_op, const SparseOperator& backward_op,
                                 const Matrix& features, const RetrieverParams& params,
                                 const DropoutMasks& masks = {}) {
  if (features.cols() != params.input_proj.rows())
    throw ContractViolation("encode: feature width " + std::to_string(features.cols()) + " != " +
                            std::to_string(params.input_proj.rows()));
  if (features.rows() != forward_op.rows() || features.rows() != backward_op.rows())
    throw ContractViolation("encode: feature rows do not match the line-graph node count");
  EncoderState st;
  st.projected = features * params.input_proj;
  const bool drop = !masks.empty();
  st.forward = detail::run_stack(forward_op, st.projected, params.forward, drop ? &masks.forward : nullptr);
  st.backward = detail::run_stack(backward_op, st.projected, params.backward, drop ? &masks.backward : nullptr);
  st.z = 0.5 * (st.forward.out + st.backward.out);
  return st;
}

/// Node embeddings z (N x H). In Train mode dropout is sampled from `rng`.
inline Matrix encode(const LineGraphView& lg, const LineGraphView& rev, const Matrix& features,
                     const RetrieverParams& params, Mode mode = Mode::Eval, Rng* rng = nullptr,
                     double dropout = 0.0) {
  DropoutMasks masks;
  if (mode == Mode::Train && dropout > 0.0) {
    if (!rng) throw ContractViolation("encode: train mode with dropout needs an rng");
    masks = DropoutMasks::sample(features.rows(), params.input_proj.cols(), dropout, *rng);
  }
  return encode_state(mean_in_operator(lg), mean_in_operator(rev), features, params, masks).z;
}

inline RowVector question_vector(const RowVector& question_embedding, const RetrieverParams& params) {
  return question_embedding * params.question_proj;
}

// ---------------------------------------------------------------------------
// STOP head and step distribution

struct StopState {
  RowVector input;   // [sum prefix | z_q]
  RowVector pre;     // input W1 + b1
  RowVector hidden;  // ReLU(pre)
  RowVector out;     // hidden W2 + b2
};

inline StopState stop_state(const RowVector& prefix_sum, const RowVector& zq, const RetrieverParams& params) {
  StopState s;
  const auto h = prefix_sum.size();
  s.input.resize(2 * h);
  s.input << prefix_sum, zq;
  s.pre = s.input * params.stop.w1 + params.stop.b1;
  s.hidden = s.pre.cwiseMax(0.0);
  s.out = s.hidden * params.stop.w2 + params.stop.b2;
  return s;
}

/// g_phi([sum(prefix) | z_q]).
inline RowVector stop_embedding(std::span<const RowVector> prefix, const RowVector& zq, const RetrieverParams& params) {
  if (prefix.empty()) throw ContractViolation("stop_embedding: empty prefix");
  RowVector sum = RowVector::Zero(prefix.front().size());
  for (const auto& v : prefix) sum += v;
  return stop_state(sum, zq, params).out;
}

struct StepDistribution {
  std::vector<NodeId> candidates;  // successors of the current node not already on the path
  std::vector<double> logits;      // candidates..., STOP last
  std::vector<double> probs;       // same layout
  StopState stop;

  std::size_t stop_index() const { return candidates.size(); }
  double stop_probability() const { return probs.back(); }
};

inline void softmax_into(std::span<const double> logits, std::vector<double>& probs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : logits) m = std::max(m, x);
  probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += probs[i] = std::exp(logits[i] - m);
  for (auto& p : probs) p /= sum;
}

/// Distribution over the next node given the path so far (prefix ends at
/// `current`). STOP is always a candidate; without successors it has mass 1.
inline StepDistribution step_distribution(const LineGraphView& lg, const Matrix& z, const RowVector& zq,
                                          NodeId current, std::span<const NodeId> prefix,
                                          const RetrieverParams& params) {
  if (current >= lg.node_count()) throw ContractViolation("step_distribution: invalid current node");
  if (prefix.empty()) throw ContractViolation("step_distribution: empty prefix");
  StepDistribution d;
  for (NodeId c : lg.successors(current))
    if (std::find(prefix.begin(), prefix.end(), c) == prefix.end()) d.candidates.push_back(c);
  for (NodeId c : d.candidates) d.logits.push_back(zq.dot(z.row(c)));
  RowVector sum = RowVector::Zero(z.cols());
  for (NodeId v : prefix) sum += z.row(v);
  d.stop = stop_state(sum, zq, params);
  d.logits.push_back(zq.dot(d.stop.out));
  softmax_into(d.logits, d.probs);
  return d;
}

// ---------------------------------------------------------------------------
// Losses

inline double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct TrainingExample {
  QuestionGraph graph;
  std::vector<std::vector<NodeId>> gold_paths;  // lifted rational paths
  std::set<RelationId> target_relations;        // R_*
};

/// One gold path with its positive / negative start sets.
struct LossTarget {
  std::vector<NodeId> gold;
  std::vector<NodeId> positives;  // V_pos
  std::vector<NodeId> negatives;  // V_neg = V_cand \ V_pos
};

inline LossTarget make_loss_target(const TrainingExample& ex, std::size_t gold_index) {
  LossTarget t;
  t.gold = ex.gold_paths.at(gold_index);
  if (t.gold.empty()) throw ContractViolation("gold path is empty");
  const auto& g = *ex.graph.graph;
  std::set<NodeId> pos{t.gold.front()};
  for (NodeId v : ex.graph.start_candidates)
    if (ex.target_relations.count(g.triple(v).relation)) pos.insert(v);
  t.positives.assign(pos.begin(), pos.end());
  for (NodeId v : ex.graph.start_candidates)
    if (!pos.count(v)) t.negatives.push_back(v);
  return t;
}

struct LossWeights {
  double question = 1.0;  // lambda_q
  double path = 1.0;      // lambda_path
};

struct LossBreakdown {
  double total = 0.0;
  double question = 0.0;
  double path = 0.0;
};

namespace detail {

// Path loss terms; when `d_z` is given, accumulates scaled gradients.
inline double path_loss_impl(const LineGraphView& lg, const Matrix& z, const RowVector& zq,
                             std::span<const NodeId> gold, const RetrieverParams& params, double scale, Matrix* d_z,
                             RowVector* d_zq, StopHeadParams* d_stop) {
  if (gold.empty()) throw ContractViolation("path_loss: empty gold path");
  const std::size_t steps = gold.size();  // k transitions + terminal STOP
  double total = 0.0;
  for (std::size_t i = 1; i <= steps; ++i) {
    auto prefix = gold.subspan(0, i);
    auto dist = step_distribution(lg, z, zq, prefix.back(), prefix, params);
    std::size_t target = dist.stop_index();
    if (i < steps) {
      auto it = std::find(dist.candidates.begin(), dist.candidates.end(), gold[i]);
      if (it == dist.candidates.end())
        throw ContractViolation("path_loss: gold node " + std::to_string(gold[i]) + " is not a candidate at step " +
                                std::to_string(i));
      target = static_cast<std::size_t>(it - dist.candidates.begin());
    }
    double m = *std::max_element(dist.logits.begin(), dist.logits.end());
    double lse = 0.0;
    for (double x : dist.logits) lse += std::exp(x - m);
    lse = m + std::log(lse);
    total += lse - dist.logits[target];

    if (!d_z) continue;
    const double w = scale / static_cast<double>(steps);
    for (std::size_t c = 0; c <= dist.candidates.size(); ++c) {
      double g = w * (dist.probs[c] - (c == target ? 1.0 : 0.0));
      if (g == 0.0) continue;
      if (c < dist.candidates.size()) {
        d_z->row(dist.candidates[c]) += g * zq;
        *d_zq += g * z.row(dist.candidates[c]);
      } else {
        RowVector d_out = g * zq;
        *d_zq += g * dist.stop.out;
        d_stop->w2.noalias() += dist.stop.hidden.transpose() * d_out;
        d_stop->b2 += d_out;
        RowVector d_pre = (d_out * params.stop.w2.transpose()).cwiseProduct(
            (dist.stop.pre.array() > 0.0).cast<double>().matrix());
        d_stop->w1.noalias() += dist.stop.input.transpose() * d_pre;
        d_stop->b1 += d_pre;
        RowVector d_in = d_pre * params.stop.w1.transpose();
        const auto h = zq.size();
        for (NodeId v : prefix) d_z->row(v) += d_in.head(h);
        *d_zq += d_in.tail(h);
      }
    }
  }
  return total / static_cast<double>(steps);
}

inline double question_loss_impl(const Matrix& z, const RowVector& zq, std::span<const NodeId> pos,
                                 std::span<const NodeId> neg, double scale, Matrix* d_z, RowVector* d_zq) {
  if (pos.empty()) throw ContractViolation("question_triple_loss: empty positive set");
  double lp = 0.0, ln = 0.0;
  const double np = static_cast<double>(pos.size());
  for (NodeId v : pos) {
    double s = zq.dot(z.row(v));
    lp -= log_sigmoid(s);
    if (d_z) {
      double g = -scale * sigmoid(-s) / np;
      d_z->row(v) += g * zq;
      *d_zq += g * z.row(v);
    }
  }
  if (!neg.empty()) {
    const double nn = static_cast<double>(neg.size());
    for (NodeId v : neg) {
      double s = zq.dot(z.row(v));
      ln -= log_sigmoid(-s);
      if (d_z) {
        double g = scale * sigmoid(s) / nn;
        d_z->row(v) += g * zq;
        *d_zq += g * z.row(v);
      }
    }
    ln /= nn;
  }
  return lp / np + ln;
}

inline void require_finite(const Matrix& m, const std::string& name) {
  if (!m.allFinite()) throw NumericalError("non-finite values in " + name);
}

}  // namespace detail

/// Mean over steps of -log P(gold step), closing with -log P(STOP | full path).
inline double path_loss(const LineGraphView& lg, const Matrix& z, const RowVector& zq, std::span<const NodeId> gold,
                        const RetrieverParams& params) {
  return detail::path_loss_impl(lg, z, zq, gold, params, 1.0, nullptr, nullptr, nullptr);
}

/// Negative-sampling start loss; the negative term vanishes when V_neg is empty.
inline double question_triple_loss(const Matrix& z, const RowVector& zq, std::span<const NodeId> positives,
                                   std::span<const NodeId> negatives) {
  return detail::question_loss_impl(z, zq, positives, negatives, 1.0, nullptr, nullptr);
}

struct LossAndGradients {
  LossBreakdown loss;
  RetrieverParams grads;
};

/// L = lambda_q L_q + lambda_path L_path and its exact gradient for every tensor.
inline LossAndGradients loss_and_gradients(const TrainingExample& ex, const LossTarget& target,
                                           const RetrieverParams& params, const LossWeights& weights = {},
                                           const DropoutMasks& masks = {}) {
  const auto& qg = ex.graph;
  auto st = encode_state(qg.forward_op, qg.backward_op, qg.features, params, masks);
  RowVector zq = question_vector(qg.question_embedding, params);
  detail::require_finite(st.z, "node embeddings z");
  detail::require_finite(zq, "question embedding z_q");

  LossAndGradients out{{}, params.zeros_like()};
  Matrix d_z = Matrix::Zero(st.z.rows(), st.z.cols());
  RowVector d_zq = RowVector::Zero(zq.size());
  out.loss.path = detail::path_loss_impl(qg.lg, st.z, zq, target.gold, params, weights.path, &d_z, &d_zq,
                                         &out.grads.stop);
  out.loss.question =
      detail::question_loss_impl(st.z, zq, target.positives, target.negatives, weights.question, &d_z, &d_zq);
  out.loss.total = weights.question * out.loss.question + weights.path * out.loss.path;
  if (!std::isfinite(out.loss.total)) throw NumericalError("non-finite loss for question " + qg.question_id);

  out.grads.question_proj.noalias() += qg.question_embedding.transpose() * d_zq;
  const bool drop = !masks.empty();
  Matrix d_half = 0.5 * d_z;
  Matrix d_h0 = detail::backprop_stack(qg.forward_op, st.forward, params.forward, drop ? &masks.forward : nullptr,
                                       d_half, out.grads.forward);
  d_h0 += detail::backprop_stack(qg.backward_op, st.backward, params.backward, drop ? &masks.backward : nullptr,
                                 d_half, out.grads.backward);
  out.grads.input_proj.noalias() += qg.features.transpose() * d_h0;
  for (const auto& [name, m] : out.grads.tensors()) detail::require_finite(*m, "gradient of " + name);
  return out;
}

/// Loss only, through the same forward pass.
inline LossBreakdown evaluate_loss(const TrainingExample& ex, const LossTarget& target, const RetrieverParams& params,
                                   const LossWeights& weights = {}, const DropoutMasks& masks = {}) {
  const auto& qg = ex.graph;
  auto st = encode_state(qg.forward_op, qg.backward_op, qg.features, params, masks);
  RowVector zq = question_vector(qg.question_embedding, params);
  LossBreakdown l;
  l.path = path_loss(qg.lg, st.z, zq, target.gold, params);
  l.question = question_triple_loss(st.z, zq, target.positives, target.negatives);
  l.total = weights.question * l.question + weights.path * l.path;
  return l;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

inline void adam_step(RetrieverParams& params, const RetrieverParams& grads, AdamState& state, double lr) {
  auto ps = params.tensors();
  auto gs = grads.tensors();
  if (state.m.empty()) {
    for (auto& [n, p] : ps) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix& g = *gs[i].second;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    Matrix m_hat = state.m[i] / c1;
    Matrix v_hat = state.v[i] / c2;
    ps[i].second->array() -= lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 15;
  double learning_rate = 1e-3;
  std::size_t batch_size = 10;
  double dropout = 0.2;
  std::size_t hidden_dim = 512;
  double lambda_q = 1.0;
  double lambda_path = 1.0;
  std::uint64_t seed = 0;
};

struct EpochLoss {
  int epoch = 0;
  double total = 0.0;
  double question = 0.0;
  double path = 0.0;
};

struct TrainResult {
  RetrieverParams params;
  std::vector<EpochLoss> trace;
};

/// Minibatch Adam over shuffled examples; one rational path is drawn per
/// example visit. Deterministic for a fixed seed.
inline TrainResult train(std::span<const TrainingExample> data, const TrainConfig& cfg,
                         std::optional<RetrieverParams> initial = std::nullopt) {
  if (data.empty()) throw ContractViolation("train: empty dataset");
  for (const auto& ex : data)
    if (ex.gold_paths.empty()) throw ContractViolation("train: question " + ex.graph.question_id + " has no labels");
  Rng rng(cfg.seed);
  const auto text_dim = static_cast<std::size_t>(data.front().graph.question_embedding.size());
  TrainResult out{initial ? *initial : RetrieverParams::init(text_dim, cfg.hidden_dim, rng), {}};
  AdamState adam;
  const LossWeights weights{cfg.lambda_q, cfg.lambda_path};
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    EpochLoss el{epoch};
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      auto grads = out.params.zeros_like();
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = data[order[k]];
        auto target = make_loss_target(ex, uniform_index(rng, ex.gold_paths.size()));
        auto masks = DropoutMasks::sample(static_cast<Eigen::Index>(ex.graph.node_count()),
                                          static_cast<Eigen::Index>(out.params.hidden_dim()), cfg.dropout, rng);
        auto lg = loss_and_gradients(ex, target, out.params, weights, masks);
        grads += lg.grads;
        el.total += lg.loss.total;
        el.question += lg.loss.question;
        el.path += lg.loss.path;
      }
      grads *= 1.0 / static_cast<double>(end - start);
      adam_step(out.params, grads, adam, cfg.learning_rate);
    }
    const double n = static_cast<double>(data.size());
    el.total /= n;
    el.question /= n;
    el.path /= n;
    out.trace.push_back(el);
  }
  return out;
}

/// Lifts each labelled path and pairs it with the question's graph data.
inline TrainingExample make_training_example(const QuestionInstance& q, const EmbeddingProvider& provider,
                                             const std::vector<ReasoningPath>& labels,
                                             const std::set<RelationId>& target_relations) {
  TrainingExample ex{prepare_question(q, provider), {}, target_relations};
  std::set<NodeId> starts(ex.graph.start_candidates.begin(), ex.graph.start_candidates.end());
  for (const auto& p : labels) {
    auto nodes = lift_path(q.graph(), p.triples);
    if (!starts.count(nodes.front()))
      throw ContractViolation("label for " + q.question_id + " does not start at a question entity");
    ex.gold_paths.push_back(std::move(nodes));
  }
  return ex;
}

}  // namespace rapl
