#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gemft/tape.hpp"
#include "gemft/tensor.hpp"

namespace gemft {

// Flattened gradient over the trainable entries of a store, in store order.
using GradientVector = std::vector<float>;

// Named trainable tensors with an insertion order fixed for the lifetime of
// the store. Frozen entries stay in the store but are excluded from
// flattening and from optimizer updates.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  const std::string& name_at(std::size_t i) const { return entries_[i].name; }
  const Tensor& at(std::size_t i) const { return entries_[i].value; }
  Tensor& at(std::size_t i) { return entries_[i].value; }

  void set_frozen(const std::string& name, bool frozen);
  bool is_frozen(const std::string& name) const;
  bool is_frozen(std::size_t i) const { return entries_[i].frozen; }
  std::vector<std::string> frozen_names() const;
  void clear_frozen();

  std::size_t scalar_count() const;
  std::size_t trainable_scalar_count() const;

  // Registers every entry on the tape: trainable ones as parameters, frozen
  // ones as constants. Returned in store order.
  std::vector<Var> bind(Tape& tape) const;

  // FNV-1a over names, shapes, and raw bytes of every entry.
  std::uint64_t hash() const;

  bool bitwise_equal(const ParameterStore& other) const;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    bool frozen = false;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Concatenates gradients of the trainable entries in store order. `grads`
// must cover exactly those entries.
GradientVector flatten_gradients(const Gradients& grads, const ParameterStore& store);

// Inverse of flatten_gradients.
Gradients unflatten_gradients(std::span<const float> flat, const ParameterStore& store);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);

}  // namespace gemft
