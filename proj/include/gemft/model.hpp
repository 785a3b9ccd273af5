#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gemft/parameter_store.hpp"
#include "gemft/tape.hpp"

namespace gemft {

inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kReservedIds = 3;

struct ModelConfig {
  int vocab_size = 256;
  int hidden = 64;
  int layers = 2;
  int heads = 2;
  int max_seq_len = 16;
  int tag_set_size = 11;

  // Throws ConfigError listing every violated constraint.
  void validate() const;
  std::uint64_t hash() const;
  bool operator==(const ModelConfig&) const = default;
};

// Analytic parameter count of the architecture built by Encoder::init.
std::size_t parameter_count(const ModelConfig& config);

enum class Head { mlm, tag, sentence };

// Variable-length sentences packed row-wise for one forward pass.
struct TokenBatch {
  std::vector<int> ids;
  std::vector<int> positions;
  Segments segments;

  static TokenBatch pack(std::span<const std::vector<int>> sentences);
  int sentence_count() const { return segments.count(); }
};

// Tape handles for every parameter of a model, in store order.
struct BoundModel {
  std::vector<Var> vars;
  const ParameterStore* store = nullptr;
  Var operator[](const std::string& name) const;
};

// Small post-LN transformer encoder with MLM, tagging, and sentence heads.
class Encoder {
 public:
  // Weights ~ truncated normal (σ = 0.02), biases 0, layer-norm gains 1.
  static Encoder init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // Freezes embeddings and the bottom n layers; replaces any previous mask.
  void freeze_bottom(int n);
  void unfreeze_all() { params_.clear_frozen(); }
  std::vector<std::string> frozen_mask() const { return params_.frozen_names(); }

  // Re-draws the tagging projection (fresh task head).
  void reinit_tag_head(std::uint64_t seed);

  BoundModel bind(Tape& tape) const;

  // Hidden states [rows, d] of a packed batch.
  Var encode(Tape& tape, const BoundModel& bound, const TokenBatch& batch) const;
  // [rows.size(), vocab] logits for the selected hidden rows.
  Var mlm_logits(Tape& tape, const BoundModel& bound, Var hidden, std::span<const int> rows) const;
  // [rows, tags]
  Var tag_logits(Tape& tape, const BoundModel& bound, Var hidden) const;
  // Mean-pool of non-PAD rows per sentence, L2-normalised → [sentences, d].
  Var sentence_embedding(Tape& tape, Var hidden, const TokenBatch& batch) const;
  // mlm → all rows; tag → all rows; sentence → one unit row per sentence.
  Var apply_head(Tape& tape, const BoundModel& bound, Var hidden, Head head, const TokenBatch& batch) const;

  // Convenience forward passes without gradients.
  Tensor encode(std::span<const int> tokens) const;
  Tensor sentence_embeddings(std::span<const std::vector<int>> sentences) const;

 private:
  void check_tokens(std::span<const int> tokens) const;

  ModelConfig config_;
  ParameterStore params_;
};

}  // namespace gemft
