#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gemft/model.hpp"
#include "gemft/optimizer.hpp"
#include "gemft/parameter_store.hpp"
#include "gemft/tasks.hpp"

namespace gemft {

enum class MemoryKind { mlm, xsr };

// One stored training item. MLM items keep the mask drawn at population time;
// XSR items are a source/target translation pair.
struct MemoryExample {
  MaskedSentence masked;
  std::vector<int> source, target;
};

class EpisodicMemory {
 public:
  EpisodicMemory(std::string task, MemoryKind kind, int capacity, std::vector<MemoryExample> examples,
                 float temperature = 0.1f);

  const std::string& task() const { return task_; }
  MemoryKind kind() const { return kind_; }
  int capacity() const { return capacity_; }
  float temperature() const { return temperature_; }
  std::size_t size() const { return examples_.size(); }
  const std::vector<MemoryExample>& examples() const { return examples_; }
  std::uint64_t hash() const;

 private:
  std::string task_;
  MemoryKind kind_;
  int capacity_;
  float temperature_;
  std::vector<MemoryExample> examples_;
};

// m distinct indices drawn uniformly from [0, n), in draw order.
std::vector<int> sample_without_replacement(int n, int m, std::uint64_t seed);

// Masks are drawn once here (all-[MASK], rate p, at least one position per sentence).
EpisodicMemory populate_mlm_memory(std::span<const std::vector<int>> sentences, int m, std::uint64_t seed,
                                   int vocab_size, double p = 0.15);
EpisodicMemory populate_xsr_memory(std::span<const std::vector<int>> sources, std::span<const std::vector<int>> targets,
                                   int m, std::uint64_t seed, float temperature = 0.1f);

// Mean of per-example losses over the memory.
Var memory_loss(Tape& tape, const Encoder& model, const BoundModel& bound, const EpisodicMemory& memory);
double memory_loss(const Encoder& model, const EpisodicMemory& memory);

struct LossAndGradient {
  double loss = 0.0;
  GradientVector gradient;
};
LossAndGradient memory_gradient(const Encoder& model, const EpisodicMemory& memory);

// Rows g_k, one per registered memory, each of the trainable dimension.
using GradientMatrix = std::vector<GradientVector>;

std::vector<int> detect_violations(std::span<const float> g, const GradientMatrix& G, double margin = 0.0);

// g - (<g,gk>/<gk,gk>) gk
GradientVector project_single(std::span<const float> g, std::span<const float> gk);

struct ProjectionResult {
  GradientVector projected;
  std::vector<int> violated;
  std::vector<double> dual;
  double distance = 0.0;
  int sweeps = 0;
};

struct QpOptions {
  double tolerance = 1e-9;
  int max_sweeps = 10000;
};

// Solves min_v ½vᵀGGᵀv + gᵀGᵀv, v ≥ 0 by projected coordinate descent and
// returns g̃ = Gᵀv + g. Rows of G are all constraints passed in.
ProjectionResult project_dual_qp(std::span<const float> g, const GradientMatrix& G, const QpOptions& opt = {});

// Relative constraint slack <a, gk> / (‖g‖·‖gk‖).
double normalized_inner(std::span<const float> a, std::span<const float> gk, double g_norm);

struct StepDiagnostics {
  long step = 0;
  double task_loss = 0.0;
  std::vector<std::string> memory_tasks;
  std::vector<double> memory_losses;
  std::vector<int> dropped;  // constraints skipped for a vanishing gradient
  ProjectionResult projection;
};

// One GEM update: task gradient, memory gradients, projection when any
// constraint is violated, then a plain optimizer step along the result.
StepDiagnostics gem_step(Encoder& model, const TagBatch& batch, std::span<const EpisodicMemory* const> memories,
                         Optimizer& optimizer, double margin = 0.0,
                         const std::function<void(const std::string&)>& warn = {});

std::string to_json_line(const StepDiagnostics& d);

}  // namespace gemft
