#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/graph.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

/// Named model parameters with deterministic iteration order. The name set
/// and shapes are fixed once built from a config; arithmetic helpers below
/// insist on matching structure so streams from different models never mix.
class ParameterSet {
 public:
  void add(std::string name, Tensor t) {
    if (index_.count(name)) throw Error("duplicate parameter " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& at(const std::string& name) const { return tensors_[find_(name)]; }
  Tensor& at(const std::string& name) { return tensors_[find_(name)]; }

  std::size_t count() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const Tensor& t : tensors_) n += t.numel();
    return n;
  }

  bool same_structure(const ParameterSet& o) const {
    if (names_ != o.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].shape != o.tensors_[i].shape) return false;
    return true;
  }

  /// All values in declaration order as one flat vector.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total_size()));
    for (const Tensor& t : tensors_) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (static_cast<std::int64_t>(flat.size()) != total_size())
      throw ShapeError("flat size " + std::to_string(flat.size()) + " != parameter count " +
                       std::to_string(total_size()));
    std::size_t off = 0;
    for (Tensor& t : tensors_) {
      for (double& x : t.data) x = flat[off++];
    }
  }

 private:
  std::size_t find_(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline void require_same_structure(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_structure(b)) throw ShapeError("parameter sets have different structure");
}

/// dst += s * src, elementwise by position.
inline void add_scaled(ParameterSet& dst, const ParameterSet& src, double s) {
  require_same_structure(dst, src);
  for (std::size_t i = 0; i < dst.count(); ++i) {
    auto& d = dst.tensor(i).data;
    const auto& x = src.tensor(i).data;
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += s * x[j];
  }
}

/// Largest |a - b| across all entries of two structurally equal sets.
inline double max_abs_diff(const ParameterSet& a, const ParameterSet& b) {
  require_same_structure(a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.count(); ++i) {
    const auto& x = a.tensor(i).data;
    const auto& y = b.tensor(i).data;
    for (std::size_t j = 0; j < x.size(); ++j) worst = std::max(worst, std::fabs(x[j] - y[j]));
  }
  return worst;
}

/// A ParameterSet bound into a graph as leaves, one Var per tensor.
class BoundParams {
 public:
  BoundParams() = default;

  BoundParams(Graph& g, const ParameterSet& p, bool requires_grad = true) {
    names_ = p.names();
    vars_.reserve(names_.size());
    for (std::size_t i = 0; i < p.count(); ++i) {
      vars_.push_back(g.leaf(p.tensor(i), requires_grad));
      index_.emplace(names_[i], i);
    }
  }

  /// Adopts existing graph nodes (one per name) as the bound parameters.
  BoundParams(std::vector<std::string> names, std::vector<Var> vars)
      : names_(std::move(names)), vars_(std::move(vars)) {
    if (names_.size() != vars_.size()) throw ShapeError("names/vars length mismatch");
    for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], i);
  }

  Var at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return vars_[it->second];
  }

  const std::vector<Var>& list() const { return vars_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Symmetric uniform fill with limit 1/sqrt(fan_in).
inline Tensor uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : t.data) x = rng.uniform(-limit, limit);
  return t;
}

}  // namespace metapinn
