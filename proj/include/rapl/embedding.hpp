#pragma once

// Text embedding providers: a precomputed table (real encoder output) and a
// deterministic token-hash fallback for offline runs.

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>

#include "kg_model.hpp"
#include "text.hpp"

namespace rapl {

using Vector = Eigen::VectorXd;

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  /// Deterministic; opaque ids and unknown labels map to the zero vector.
  virtual Vector embed(std::string_view label) const = 0;
};

/// Sum of per-token pseudo-random Gaussian vectors, scaled by 1/sqrt(#tokens).
/// Token vectors are seeded from the token's FNV-1a hash, so unrelated
/// tokens are near-orthogonal and shared tokens give correlated embeddings.
class HashEmbedding : public EmbeddingProvider {
 public:
  explicit HashEmbedding(std::size_t dim, std::uint64_t salt = 0) : dim_(dim), salt_(salt) {}

  std::size_t dim() const override { return dim_; }

  Vector embed(std::string_view label) const override {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(dim_));
    if (text::is_opaque_id(label)) return v;
    auto tokens = text::content_tokens(label);
    if (tokens.empty()) return v;
    for (const auto& t : tokens) v += token_vector(t);
    return v / std::sqrt(static_cast<double>(tokens.size()));
  }

 private:
  Vector token_vector(const std::string& token) const {
    std::mt19937_64 rng(text::splitmix64(text::fnv1a(token) ^ salt_));
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
    Vector v(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = n(rng);
    return v;
  }

  std::size_t dim_;
  std::uint64_t salt_;
};

/// Lines of "label<TAB>v1 v2 ... vD". Labels not in the table embed to zero.
class TableEmbedding : public EmbeddingProvider {
 public:
  static TableEmbedding load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open embedding table " + path.string());
    TableEmbedding t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError("embedding line has no tab", lineno);
      std::istringstream vals(line.substr(tab + 1));
      std::vector<double> xs;
      double x;
      while (vals >> x) xs.push_back(x);
      if (!vals.eof()) throw ParseError("non-numeric embedding value", lineno);
      if (xs.empty()) throw ParseError("empty embedding vector", lineno);
      if (t.dim_ == 0) t.dim_ = xs.size();
      if (xs.size() != t.dim_)
        throw ParseError("embedding dimension " + std::to_string(xs.size()) + " != " + std::to_string(t.dim_),
                         lineno);
      t.table_[line.substr(0, tab)] = Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    }
    if (t.dim_ == 0) throw ParseError("embedding table " + path.string() + " is empty");
    return t;
  }

  void set(std::string label, Vector v) {
    if (dim_ == 0) dim_ = static_cast<std::size_t>(v.size());
    if (static_cast<std::size_t>(v.size()) != dim_) throw ContractViolation("embedding dimension mismatch");
    table_[std::move(label)] = std::move(v);
  }

  std::size_t dim() const override { return dim_; }

  Vector embed(std::string_view label) const override {
    auto it = table_.find(std::string(label));
    if (it == table_.end()) return Vector::Zero(static_cast<Eigen::Index>(dim_));
    return it->second;
  }

  std::size_t size() const { return table_.size(); }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Vector> table_;
};

}  // namespace rapl
