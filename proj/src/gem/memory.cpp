#include "gemft/gem.hpp"
#include "gemft/hash.hpp"
#include "gemft/rng.hpp"

namespace gemft {

EpisodicMemory::EpisodicMemory(std::string task, MemoryKind kind, int capacity, std::vector<MemoryExample> examples,
                               float temperature)
    : task_(std::move(task)), kind_(kind), capacity_(capacity), temperature_(temperature), examples_(std::move(examples)) {
  if (capacity_ <= 0) throw ConfigError("memory capacity must be positive");
  if (static_cast<int>(examples_.size()) > capacity_) throw ConfigError("memory holds more examples than its capacity");
}

std::uint64_t EpisodicMemory::hash() const {
  Fnv1a h;
  h.update(task_);
  h.update_pod(static_cast<int>(kind_));
  auto vec = [&](const std::vector<int>& v) {
    h.update_pod(v.size());
    h.update(v.data(), v.size() * sizeof(int));
  };
  for (const auto& e : examples_) {
    vec(e.masked.input);
    vec(e.masked.labels);
    vec(e.source);
    vec(e.target);
  }
  return h.digest();
}

std::vector<int> sample_without_replacement(int n, int m, std::uint64_t seed) {
  if (m < 0) throw ConfigError("memory size must be non-negative");
  if (m > n)
    throw ConfigError("cannot draw " + std::to_string(m) + " memories from a dataset of " + std::to_string(n));
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  // partial Fisher–Yates
  for (int i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
  idx.resize(m);
  return idx;
}

EpisodicMemory populate_mlm_memory(std::span<const std::vector<int>> sentences, int m, std::uint64_t seed,
                                   int vocab_size, double p) {
  const std::vector<int> picked = sample_without_replacement(static_cast<int>(sentences.size()), m, seed);
  MaskOptions opt;
  opt.p = p;
  opt.mask_only = true;
  opt.at_least_one = true;
  std::vector<MemoryExample> ex;
  ex.reserve(m);
  for (int i : picked) {
    MemoryExample e;
    e.masked = mlm_mask_sentence(sentences[i], opt, derive_seed(seed, "memory-mask", i), vocab_size);
    if (e.masked.positions.empty()) throw ShapeError("mlm memory: sentence without maskable tokens");
    ex.push_back(std::move(e));
  }
  return EpisodicMemory("mlm", MemoryKind::mlm, m, std::move(ex));
}

EpisodicMemory populate_xsr_memory(std::span<const std::vector<int>> sources, std::span<const std::vector<int>> targets,
                                   int m, std::uint64_t seed, float temperature) {
  if (sources.size() != targets.size()) throw ShapeError("xsr memory: sources and targets differ in count");
  if (m < 2) throw ConfigError("xsr memory needs at least two pairs");
  const std::vector<int> picked = sample_without_replacement(static_cast<int>(sources.size()), m, seed);
  std::vector<MemoryExample> ex;
  ex.reserve(m);
  for (int i : picked) {
    MemoryExample e;
    e.source = sources[i];
    e.target = targets[i];
    ex.push_back(std::move(e));
  }
  return EpisodicMemory("xsr", MemoryKind::xsr, m, std::move(ex), temperature);
}

Var memory_loss(Tape& tape, const Encoder& model, const BoundModel& bound, const EpisodicMemory& memory) {
  const auto& ex = memory.examples();
  if (ex.empty()) throw ShapeError("memory_loss: empty memory '" + memory.task() + "'");
  const double n = static_cast<double>(ex.size());

  if (memory.kind() == MemoryKind::mlm) {
    MaskedBatch batch;
    for (const auto& e : ex) batch.sentences.push_back(e.masked);
    const MlmInputs in = mlm_inputs(batch);
    // each example contributes the mean over its own masked positions, scaled by 1/|M|
    std::vector<float> weights(in.rows.size());
    for (std::size_t r = 0; r < in.rows.size(); ++r)
      weights[r] = static_cast<float>(1.0 / (n * static_cast<double>(ex[in.owner[r]].masked.positions.size())));
    const TokenBatch packed = TokenBatch::pack(in.inputs);
    const Var h = model.encode(tape, bound, packed);
    return ops::weighted_cross_entropy(tape, model.mlm_logits(tape, bound, h, in.rows), in.labels, weights);
  }

  std::vector<std::vector<int>> src, tgt;
  src.reserve(ex.size());
  tgt.reserve(ex.size());
  for (const auto& e : ex) {
    src.push_back(e.source);
    tgt.push_back(e.target);
  }
  return xsr_pair_loss(tape, model, bound, src, tgt, memory.temperature());
}

double memory_loss(const Encoder& model, const EpisodicMemory& memory) {
  Tape tape;
  const BoundModel b = model.bind(tape);
  return tape.value(memory_loss(tape, model, b, memory)).data[0];
}

LossAndGradient memory_gradient(const Encoder& model, const EpisodicMemory& memory) {
  Tape tape;
  const BoundModel b = model.bind(tape);
  const Var loss = memory_loss(tape, model, b, memory);
  tape.backward(loss);
  return {tape.value(loss).data[0], flatten_gradients(tape.parameter_gradients(), model.params())};
}

}  // namespace gemft
