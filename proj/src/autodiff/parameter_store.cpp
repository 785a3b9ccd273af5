#include "gemft/parameter_store.hpp"

#include <cmath>
#include <cstring>

#include "gemft/hash.hpp"

namespace gemft {

void ParameterStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw Error("parameter name must not be empty");
  if (index_.contains(name)) throw Error("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, std::move(value), false});
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const { return entries_[index_of(name)].value; }
Tensor& ParameterStore::get(const std::string& name) { return entries_[index_of(name)].value; }

void ParameterStore::set_frozen(const std::string& name, bool frozen) { entries_[index_of(name)].frozen = frozen; }
bool ParameterStore::is_frozen(const std::string& name) const { return entries_[index_of(name)].frozen; }

std::vector<std::string> ParameterStore::frozen_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.frozen) out.push_back(e.name);
  return out;
}

void ParameterStore::clear_frozen() {
  for (auto& e : entries_) e.frozen = false;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (!e.frozen) n += e.value.numel();
  return n;
}

std::vector<Var> ParameterStore::bind(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(entries_.size());
  for (const auto& e : entries_) vars.push_back(e.frozen ? tape.constant(e.value) : tape.parameter(e.name, e.value));
  return vars;
}

std::uint64_t ParameterStore::hash() const {
  Fnv1a h;
  for (const auto& e : entries_) {
    h.update(e.name);
    for (int d : e.value.shape) h.update_pod(static_cast<std::int32_t>(d));
    h.update(e.value.data.data(), e.value.data.size() * sizeof(float));
  }
  return h.digest();
}

bool ParameterStore::bitwise_equal(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!gemft::bitwise_equal(entries_[i].value, other.entries_[i].value)) return false;
  }
  return true;
}

GradientVector flatten_gradients(const Gradients& grads, const ParameterStore& store) {
  GradientVector flat;
  flat.reserve(store.trainable_scalar_count());
  std::size_t used = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name_at(i);
    auto it = grads.find(name);
    if (store.is_frozen(i)) {
      if (it != grads.end()) throw Error("flatten_gradients: gradient given for frozen parameter '" + name + "'");
      continue;
    }
    if (it == grads.end()) throw Error("flatten_gradients: missing gradient for '" + name + "'");
    if (it->second.shape != store.at(i).shape)
      throw ShapeError("flatten_gradients: gradient shape mismatch for '" + name + "'");
    flat.insert(flat.end(), it->second.data.begin(), it->second.data.end());
    ++used;
  }
  if (used != grads.size()) throw Error("flatten_gradients: gradients contain entries not in the store");
  return flat;
}

Gradients unflatten_gradients(std::span<const float> flat, const ParameterStore& store) {
  if (flat.size() != store.trainable_scalar_count())
    throw ShapeError("unflatten_gradients: length " + std::to_string(flat.size()) + " != trainable count " +
                     std::to_string(store.trainable_scalar_count()));
  Gradients out;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.is_frozen(i)) continue;
    const Tensor& p = store.at(i);
    Tensor g(p.shape);
    std::memcpy(g.data.data(), flat.data() + pos, p.numel() * sizeof(float));
    pos += p.numel();
    out.emplace(store.name_at(i), std::move(g));
  }
  return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

}  // namespace gemft
