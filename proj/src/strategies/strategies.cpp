#include <json.hpp>

#include "gemft/hash.hpp"
#include "gemft/rng.hpp"
#include "gemft/strategies.hpp"

namespace gemft {

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::naive: return "naive";
    case Regime::frozen: return "frozen";
    case Regime::mtf: return "mtf";
    case Regime::gem: return "gem";
  }
  return "?";
}

Regime regime_from_name(const std::string& s) {
  for (Regime r : {Regime::naive, Regime::frozen, Regime::mtf, Regime::gem})
    if (s == regime_name(r)) return r;
  throw ConfigError("unknown regime '" + s + "' (expected naive, frozen, mtf, gem)");
}

std::string StrategyConfig::aux_name() const {
  if (aux_mlm && aux_xsr) return "both";
  if (aux_mlm) return "mlm";
  if (aux_xsr) return "xsr";
  return "none";
}

void StrategyConfig::validate() const {
  std::vector<std::string> bad;
  const bool plain = regime == Regime::naive || regime == Regime::frozen;
  if (plain && has_aux()) bad.push_back(std::string(regime_name(regime)) + " takes no auxiliary tasks");
  if (!plain && !has_aux()) bad.push_back(std::string(regime_name(regime)) + " needs at least one auxiliary task");
  if (!(lr > 0)) bad.push_back("lr must be positive");
  if (epochs < 1) bad.push_back("epochs must be at least 1");
  if (batch_size < 1) bad.push_back("batch_size must be at least 1");
  if (aux_batch_size < 2) bad.push_back("aux_batch_size must be at least 2");
  if (weight_decay < 0) bad.push_back("weight_decay must be non-negative");
  if (mtf_weight < 0) bad.push_back("mtf_weight must be non-negative");
  if (gem_margin < 0) bad.push_back("gem_margin must be non-negative");
  if (!(clip_norm >= 0)) bad.push_back("clip_norm must be non-negative");
  if (frozen_n < 0) bad.push_back("frozen_n must be non-negative");
  if (memory_size < 2) bad.push_back("memory_size must be at least 2");
  if (!(xsr_temperature > 0)) bad.push_back("xsr_temperature must be positive");
  if (bad.empty()) return;
  std::string msg = "invalid strategy '" + name + "':";
  for (const auto& b : bad) msg += "\n  - " + b;
  throw ConfigError(msg);
}

std::vector<std::string> StrategyConfig::preset_names() {
  return {"naive",   "frozen",  "mtf-mlm",  "mtf-xsr",     "mtf-both",
          "gem-mlm", "gem-xsr", "gem-both", "mtf-mlm-all", "gem-mlm-all"};
}

StrategyConfig StrategyConfig::preset(const std::string& name) {
  StrategyConfig c;
  c.name = name;
  std::string rest = name;
  auto take = [&](const std::string& token) {
    if (rest == token) {
      rest.clear();
      return true;
    }
    if (rest.starts_with(token + "-")) {
      rest = rest.substr(token.size() + 1);
      return true;
    }
    return false;
  };
  bool known = false;
  for (Regime r : {Regime::naive, Regime::frozen, Regime::mtf, Regime::gem})
    if (take(regime_name(r))) {
      c.regime = r;
      known = true;
      break;
    }
  if (!known) throw ConfigError("unknown strategy '" + name + "'");
  if (take("mlm")) c.aux_mlm = true;
  else if (take("xsr")) c.aux_xsr = true;
  else if (take("both")) c.aux_mlm = c.aux_xsr = true;
  if (take("all")) {
    if (!c.aux_mlm) throw ConfigError("strategy '" + name + "': -all applies to MLM only");
    c.mlm_scope = MlmScope::all_languages;
  }
  if (!rest.empty()) throw ConfigError("unknown strategy '" + name + "'");
  c.validate();
  return c;
}

BatchIterator::BatchIterator(int n, int batch_size, std::uint64_t seed) : n_(n), batch_size_(batch_size), seed_(seed) {
  if (n < 1 || batch_size < 1) throw ConfigError("batch iterator needs data and a positive batch size");
}

int BatchIterator::steps_per_epoch() const { return (n_ + batch_size_ - 1) / batch_size_; }

std::vector<int> BatchIterator::batch(int epoch, int b) const {
  if (epoch != cached_epoch_) {
    order_.resize(n_);
    for (int i = 0; i < n_; ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, "epoch", epoch));
    rng.shuffle(order_);
    cached_epoch_ = epoch;
  }
  const int begin = b * batch_size_, end = std::min(n_, begin + batch_size_);
  if (begin >= end) throw ShapeError("batch index past the end of the epoch");
  return {order_.begin() + begin, order_.begin() + end};
}

TagBatch select(const TagBatch& all, const std::vector<int>& idx) {
  TagBatch out;
  for (int i : idx) {
    out.ids.push_back(all.ids.at(i));
    out.labels.push_back(all.labels.at(i));
  }
  return out;
}

double naive_step(Encoder& model, const TagBatch& batch, Optimizer& optimizer, const WeightDecay& decay) {
  Tape tape;
  const BoundModel b = model.bind(tape);
  const Var loss = tagging_loss(tape, model, b, batch);
  tape.backward(loss);
  optimizer.step(model.params(), flatten_gradients(tape.parameter_gradients(), model.params()), decay);
  return tape.value(loss).data[0];
}

Var mtf_objective(Tape& tape, const Encoder& model, const BoundModel& b, const TagBatch& batch, const AuxBatches& aux,
                  float lambda, LossBreakdown* parts) {
  Var total = tagging_loss(tape, model, b, batch);
  if (parts) parts->task = tape.value(total).data[0];
  if (aux.mlm) {
    const Var l = mlm_loss(tape, model, b, *aux.mlm);
    if (parts) parts->mlm = tape.value(l).data[0];
    total = ops::add(tape, total, ops::scale(tape, l, lambda));
  }
  if (aux.xsr_source) {
    if (!aux.xsr_target) throw ShapeError("mtf: xsr batch without targets");
    const Var l = xsr_pair_loss(tape, model, b, *aux.xsr_source, *aux.xsr_target, aux.xsr_temperature);
    if (parts) parts->xsr = tape.value(l).data[0];
    total = ops::add(tape, total, ops::scale(tape, l, lambda));
  }
  if (parts) parts->total = tape.value(total).data[0];
  return total;
}

LossBreakdown mtf_step(Encoder& model, const TagBatch& batch, const AuxBatches& aux, bool want_mlm, bool want_xsr,
                       Optimizer& optimizer, float lambda) {
  if (want_mlm && !aux.mlm) throw ShapeError("mtf_step: missing mlm batch");
  if (want_xsr && !aux.xsr_source) throw ShapeError("mtf_step: missing xsr batch");
  LossBreakdown parts;
  Tape tape;
  const BoundModel b = model.bind(tape);
  const Var total = mtf_objective(tape, model, b, batch, aux, lambda, &parts);
  tape.backward(total);
  optimizer.step(model.params(), flatten_gradients(tape.parameter_gradients(), model.params()));
  return parts;
}

namespace {

// Cycles through a seeded permutation of [0, n), reshuffling at each wrap.
class Cursor {
 public:
  Cursor(int n, std::uint64_t seed) : n_(n), seed_(seed) {}
  std::vector<int> take(int k) {
    std::vector<int> out;
    while (static_cast<int>(out.size()) < k) {
      if (pos_ == static_cast<int>(order_.size())) refill();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void refill() {
    order_.resize(n_);
    for (int i = 0; i < n_; ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, "cycle", round_++));
    rng.shuffle(order_);
    pos_ = 0;
  }
  int n_;
  std::uint64_t seed_;
  std::uint64_t round_ = 0;
  int pos_ = 0;
  std::vector<int> order_;
};

}  // namespace

FinetuneResult run_finetune(Encoder& model, const ParameterStore& snapshot, const StrategyConfig& config,
                            const FinetuneData& data, std::ostream* log, const EpochHook& on_epoch) {
  config.validate();
  if (data.train.size() == 0) throw ShapeError("run_finetune: no fine-tuning data");
  FinetuneResult result;
  result.snapshot_hash_before = snapshot.hash();

  const auto& mlm_pool = config.mlm_scope == MlmScope::source_only ? data.mlm_source : data.mlm_all;
  if (config.aux_mlm && mlm_pool.empty()) throw ShapeError("run_finetune: no MLM corpus for the configured scope");
  if (config.aux_xsr && data.xsr_source.size() < 2) throw ShapeError("run_finetune: too few translation pairs");

  if (config.regime == Regime::frozen)
    model.freeze_bottom(config.frozen_n);
  else
    model.unfreeze_all();

  Optimizer opt(config.optimizer, config.lr, config.clip_norm);
  WeightDecay decay;
  if (config.regime == Regime::naive || config.regime == Regime::frozen) {
    decay.rate = config.weight_decay;
    if (config.decay_to_snapshot) decay.anchor = &snapshot;
  }

  std::vector<EpisodicMemory> memories;
  if (config.regime == Regime::gem) {
    if (config.aux_mlm)
      memories.push_back(populate_mlm_memory(mlm_pool, config.memory_size, derive_seed(config.seed, "mlm-memory"),
                                             data.vocab_size));
    if (config.aux_xsr)
      memories.push_back(populate_xsr_memory(data.xsr_source, data.xsr_target, config.memory_size,
                                             derive_seed(config.seed, "xsr-memory"), config.xsr_temperature));
  }
  std::vector<const EpisodicMemory*> mem_ptrs;
  for (const auto& m : memories) mem_ptrs.push_back(&m);
  result.memories = static_cast<int>(memories.size());

  Cursor mlm_cursor(static_cast<int>(mlm_pool.size()), derive_seed(config.seed, "mtf-mlm"));
  Cursor xsr_cursor(static_cast<int>(data.xsr_source.size()), derive_seed(config.seed, "mtf-xsr"));

  const BatchIterator batches(static_cast<int>(data.train.size()), config.batch_size, derive_seed(config.seed, "batches"));
  auto emit = [&](const nlohmann::ordered_json& j) {
    if (log) *log << j.dump() << '\n';
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int b = 0; b < batches.steps_per_epoch(); ++b) {
      const std::vector<int> idx = batches.batch(epoch, b);
      const TagBatch batch = select(data.train, idx);
      nlohmann::ordered_json line;
      switch (config.regime) {
        case Regime::naive:
        case Regime::frozen: {
          result.last_task_loss = naive_step(model, batch, opt, decay);
          line["step"] = opt.steps();
          line["task_loss"] = result.last_task_loss;
          break;
        }
        case Regime::mtf: {
          MaskedBatch mlm_batch;
          std::vector<std::vector<int>> xs, xt;
          AuxBatches aux;
          if (config.aux_mlm) {
            std::vector<std::vector<int>> sents;
            for (int i : mlm_cursor.take(config.aux_batch_size)) sents.push_back(mlm_pool[i]);
            mlm_batch = mlm_mask(sents, MaskOptions{}, derive_seed(config.seed, "mtf-mask", opt.steps()), data.vocab_size);
            if (mlm_batch.masked_count() == 0) {
              MaskOptions force;
              force.at_least_one = true;
              mlm_batch = mlm_mask(sents, force, derive_seed(config.seed, "mtf-mask", opt.steps()), data.vocab_size);
            }
            aux.mlm = &mlm_batch;
          }
          if (config.aux_xsr) {
            for (int i : xsr_cursor.take(config.aux_batch_size)) {
              xs.push_back(data.xsr_source[i]);
              xt.push_back(data.xsr_target[i]);
            }
            aux.xsr_source = &xs;
            aux.xsr_target = &xt;
            aux.xsr_temperature = config.xsr_temperature;
          }
          const LossBreakdown parts = mtf_step(model, batch, aux, config.aux_mlm, config.aux_xsr, opt, config.mtf_weight);
          result.last_task_loss = parts.task;
          line["step"] = opt.steps();
          line["task_loss"] = parts.task;
          if (config.aux_mlm) line["mlm_loss"] = parts.mlm;
          if (config.aux_xsr) line["xsr_loss"] = parts.xsr;
          line["total_loss"] = parts.total;
          break;
        }
        case Regime::gem: {
          const StepDiagnostics d = gem_step(model, batch, mem_ptrs, opt, config.gem_margin, [&](const std::string& w) {
            nlohmann::ordered_json warn;
            warn["warning"] = w;
            emit(warn);
          });
          result.last_task_loss = d.task_loss;
          line = nlohmann::ordered_json::parse(to_json_line(d));
          break;
        }
      }
      epoch_loss += result.last_task_loss;
      Fnv1a fp;
      fp.update(idx.data(), idx.size() * sizeof(int));
      line["batch"] = hex64(fp.digest());
      emit(line);
    }
    nlohmann::ordered_json summary;
    summary["epoch"] = epoch;
    summary["mean_task_loss"] = epoch_loss / batches.steps_per_epoch();
    if (on_epoch) {
      const std::string extra = on_epoch(epoch, model);
      if (!extra.empty()) summary["metrics"] = nlohmann::ordered_json::parse(extra);
    }
    emit(summary);
  }

  model.unfreeze_all();
  result.steps = opt.steps();
  result.snapshot_hash_after = snapshot.hash();
  return result;
}

}  // namespace gemft
