#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "gemft/gem.hpp"
#include "gemft/model.hpp"
#include "gemft/optimizer.hpp"
#include "gemft/tasks.hpp"

namespace gemft {

enum class Regime { naive, frozen, mtf, gem };
enum class MlmScope { source_only, all_languages };

const char* regime_name(Regime r);
Regime regime_from_name(const std::string& s);

struct StrategyConfig {
  std::string name;
  Regime regime = Regime::naive;
  bool aux_mlm = false;
  bool aux_xsr = false;
  MlmScope mlm_scope = MlmScope::source_only;
  float weight_decay = 0.01f;      // naive and frozen only
  bool decay_to_snapshot = false;  // pull toward θ* instead of zero
  float mtf_weight = 1.0f;
  double gem_margin = 0.0;
  int frozen_n = 1;
  int memory_size = 256;
  int aux_batch_size = 32;
  float xsr_temperature = 0.1f;
  int epochs = 10;  // every regime fits the source task (L0 score 1.0) by here
  int batch_size = 32;
  float lr = 3e-4f;
  float clip_norm = 1.0f;  // 0 disables
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;

  bool has_aux() const { return aux_mlm || aux_xsr; }
  std::string aux_name() const;  // none | mlm | xsr | both
  // Throws ConfigError listing every violated invariant.
  void validate() const;

  // Presets: naive, frozen, {mtf,gem}-{mlm,xsr,both}, {mtf,gem}-mlm-all.
  static StrategyConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

struct FinetuneData {
  TagBatch train;                                  // labelled source sentences
  std::vector<std::vector<int>> mlm_source;        // source-language unlabelled sentences
  std::vector<std::vector<int>> mlm_all;           // every language
  std::vector<std::vector<int>> xsr_source, xsr_target;  // translation pairs
  int vocab_size = 0;
};

// Seeded epoch-wise shuffled minibatch order shared by every regime.
class BatchIterator {
 public:
  BatchIterator(int n, int batch_size, std::uint64_t seed);
  int steps_per_epoch() const;
  // Indices of batch b of epoch e.
  std::vector<int> batch(int epoch, int b) const;

 private:
  int n_, batch_size_;
  std::uint64_t seed_;
  mutable int cached_epoch_ = -1;
  mutable std::vector<int> order_;
};

TagBatch select(const TagBatch& all, const std::vector<int>& idx);

// Task step with decoupled weight decay.
double naive_step(Encoder& model, const TagBatch& batch, Optimizer& optimizer, const WeightDecay& decay = {});

struct AuxBatches {
  const MaskedBatch* mlm = nullptr;
  const std::vector<std::vector<int>>* xsr_source = nullptr;
  const std::vector<std::vector<int>>* xsr_target = nullptr;
  float xsr_temperature = 0.1f;
};

struct LossBreakdown {
  double task = 0.0, mlm = 0.0, xsr = 0.0, total = 0.0;
};

// Combined objective L_task + λ·(L_mlm + L_xsr) on one tape.
Var mtf_objective(Tape& tape, const Encoder& model, const BoundModel& bound, const TagBatch& batch,
                  const AuxBatches& aux, float lambda, LossBreakdown* parts);
LossBreakdown mtf_step(Encoder& model, const TagBatch& batch, const AuxBatches& aux, bool want_mlm, bool want_xsr,
                       Optimizer& optimizer, float lambda);

struct FinetuneResult {
  long steps = 0;
  int memories = 0;
  double last_task_loss = 0.0;
  std::uint64_t snapshot_hash_before = 0, snapshot_hash_after = 0;
};

// Per-epoch hook; the returned JSON text (if any) goes into the log.
using EpochHook = std::function<std::string(int epoch, const Encoder& model)>;

FinetuneResult run_finetune(Encoder& model, const ParameterStore& snapshot, const StrategyConfig& config,
                            const FinetuneData& data, std::ostream* log = nullptr, const EpochHook& on_epoch = {});

}  // namespace gemft
