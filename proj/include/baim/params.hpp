// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "baim/common.hpp"

namespace baim {

template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Named parameter collection with stable addresses and deterministic
// iteration order (insertion order). Shared by the router, the backbones,
// the optimizer, the checkpoint writer, and the gradient checker.
template <typename S>
class ParamStore {
public:
  ParamStore() = default;
  ParamStore(const ParamStore& other) { copy_from(other); }
  ParamStore& operator=(const ParamStore& other) {
    if (this != &other) {
      items_.clear();
      by_name_.clear();
      copy_from(other);
    }
    return *this;
  }
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter<S>& add(const std::string& name, int rows, int cols) {
    if (by_name_.count(name)) {
      throw ValidationError("duplicate parameter name: " + name);
    }
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->value = Mat<S>::Zero(rows, cols);
    p->grad = Mat<S>::Zero(rows, cols);
    Parameter<S>* raw = p.get();
    items_.push_back(std::move(p));
    by_name_[name] = raw;
    return *raw;
  }

  Parameter<S>& get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
      throw ValidationError("unknown parameter: " + name);
    }
    return *it->second;
  }
  const Parameter<S>& get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
      throw ValidationError("unknown parameter: " + name);
    }
    return *it->second;
  }
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  size_t size() const { return items_.size(); }
  Parameter<S>& at(size_t i) { return *items_[i]; }
  const Parameter<S>& at(size_t i) const { return *items_[i]; }

  void zero_grad() {
    for (auto& p : items_) p->zero_grad();
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : items_) n += p->value.size();
    return n;
  }

  // Flat views in insertion order, column-major within each matrix. Used by
  // the finite-difference harness.
  VecD flatten_values() const {
    VecD out(scalar_count());
    std::int64_t at = 0;
    for (const auto& p : items_) {
      for (int c = 0; c < p->value.cols(); ++c) {
        for (int r = 0; r < p->value.rows(); ++r) {
          out(at++) = static_cast<double>(p->value(r, c));
        }
      }
    }
    return out;
  }
  VecD flatten_grads() const {
    VecD out(scalar_count());
    std::int64_t at = 0;
    for (const auto& p : items_) {
      for (int c = 0; c < p->grad.cols(); ++c) {
        for (int r = 0; r < p->grad.rows(); ++r) {
          out(at++) = static_cast<double>(p->grad(r, c));
        }
      }
    }
    return out;
  }
  void unflatten_values(const VecD& flat) {
    if (flat.size() != scalar_count()) {
      throw ValidationError("flat parameter vector size mismatch");
    }
    std::int64_t at = 0;
    for (auto& p : items_) {
      for (int c = 0; c < p->value.cols(); ++c) {
        for (int r = 0; r < p->value.rows(); ++r) {
          p->value(r, c) = static_cast<S>(flat(at++));
        }
      }
    }
  }
  // Name of the parameter owning flat index i.
  const std::string& name_of_flat_index(std::int64_t i) const {
    for (const auto& p : items_) {
      if (i < p->value.size()) return p->name;
      i -= p->value.size();
    }
    throw ValidationError("flat index out of range");
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& p : items_) {
      auto& q = out.add(p->name, static_cast<int>(p->value.rows()),
                        static_cast<int>(p->value.cols()));
      q.value = p->value.template cast<T>();
    }
    return out;
  }

private:
  void copy_from(const ParamStore& other) {
    for (const auto& p : other.items_) {
      auto& q = add(p->name, static_cast<int>(p->value.rows()),
                    static_cast<int>(p->value.cols()));
      q.value = p->value;
      q.grad = p->grad;
    }
  }

  std::vector<std::unique_ptr<Parameter<S>>> items_;
  std::unordered_map<std::string, Parameter<S>*> by_name_;
};

// Uniform init in +-1/sqrt(fan_in), matching the embedding-size convention
// for lookup tables (fan_in = row width).
template <typename S>
void init_uniform(Parameter<S>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int c = 0; c < p.value.cols(); ++c) {
    for (int r = 0; r < p.value.rows(); ++r) {
      p.value(r, c) = static_cast<S>(rng.uniform(-bound, bound));
    }
  }
}

}  // namespace baim
