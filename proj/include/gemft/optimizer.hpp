#pragma once

#include <map>
#include <span>
#include <string>

#include "gemft/parameter_store.hpp"

namespace gemft {

enum class OptimizerKind { sgd, adam };

struct WeightDecay {
  float rate = 0.0f;
  // Decay pulls toward this store when set, toward zero otherwise.
  const ParameterStore* anchor = nullptr;
};

// Applies a flattened update direction to the trainable entries of a store.
//   sgd:  θ ← θ − lr·d
//   adam: bias-corrected moments, β1 = 0.9, β2 = 0.999, ε = 1e-8
// Decoupled weight decay, when given, subtracts lr·rate·(θ − anchor) using
// the pre-step θ. A positive clip norm rescales directions longer than it.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, float lr, float clip_norm = 0.0f);

  void step(ParameterStore& store, std::span<const float> direction, const WeightDecay& decay = {});

  OptimizerKind kind() const { return kind_; }
  float learning_rate() const { return lr_; }
  float clip_norm() const { return clip_norm_; }
  long steps() const { return steps_; }
  // Adam first/second moments by parameter name (empty for sgd).
  const std::map<std::string, Tensor>& first_moments() const { return m_; }
  const std::map<std::string, Tensor>& second_moments() const { return v_; }

  static constexpr float kBeta1 = 0.9f;
  static constexpr float kBeta2 = 0.999f;
  static constexpr float kEpsilon = 1e-8f;

 private:
  OptimizerKind kind_;
  float lr_;
  float clip_norm_;
  long steps_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace gemft
