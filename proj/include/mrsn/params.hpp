#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mrsn/autograd.hpp"

namespace mrsn {

/// Portable seeded generator: mt19937_64 bits mapped to reals by hand so the
/// same seed yields the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  bool bernoulli(double p) { return uniform() < p; }
  double normal() {
    // Box-Muller; the spare value is dropped to keep the stream position simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
};

/// Named learnable parameters in insertion order.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, BasicArray<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, Var<T>::leaf(std::move(value))});
    return entries_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].var;
  }

  /// Overwrite a parameter's value in place, keeping its shape.
  void assign(const std::string& name, const BasicArray<T>& value) {
    auto& var = const_cast<Var<T>&>(get(name));
    if (var.shape() != value.shape()) {
      throw DimensionError("parameter " + name + " has shape " + shape_str(var.shape()) +
                           ", got " + shape_str(value.shape()));
    }
    var.mutable_value() = value;
  }

  struct Entry {
    std::string name;
    Var<T> var;
  };
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.node()->zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto& e : entries_) e.var.node()->requires_grad = trainable;
  }
  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& e : entries_) {
      if (e.name.rfind(prefix, 0) == 0) e.var.node()->requires_grad = trainable;
    }
  }

  /// Copy every value into a store of another precision (same names, order).
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.var.value().template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

template <typename T>
BasicArray<T> uniform_fan_in(Rng& rng, Shape shape, std::size_t fan_in) {
  BasicArray<T> out(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template <typename T>
BasicArray<T> normal(Rng& rng, Shape shape, double stddev) {
  BasicArray<T> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<T>(stddev * rng.normal());
  return out;
}

}  // namespace init

}  // namespace mrsn
