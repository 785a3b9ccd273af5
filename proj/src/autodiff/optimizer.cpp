#include "gemft/optimizer.hpp"

#include <cmath>

namespace gemft {

Optimizer::Optimizer(OptimizerKind kind, float lr, float clip_norm) : kind_(kind), lr_(lr), clip_norm_(clip_norm) {
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw ConfigError("optimizer learning rate must be positive");
  if (!(clip_norm >= 0.0f) || !std::isfinite(clip_norm)) throw ConfigError("clip norm must be non-negative");
}

void Optimizer::step(ParameterStore& store, std::span<const float> direction, const WeightDecay& decay) {
  if (direction.size() != store.trainable_scalar_count())
    throw ShapeError("optimizer step: direction length " + std::to_string(direction.size()) +
                     " != trainable count " + std::to_string(store.trainable_scalar_count()));
  require_finite(direction, "optimizer direction");
  ++steps_;
  // global norm clipping rescales the whole direction, so its angle to any
  // other vector is unchanged
  std::vector<float> clipped;
  if (clip_norm_ > 0.0f) {
    const double n = norm(direction);
    if (n > clip_norm_) {
      const float s = static_cast<float>(clip_norm_ / n);
      clipped.assign(direction.begin(), direction.end());
      for (float& x : clipped) x *= s;
      direction = clipped;
    }
  }
  const double bc1 = 1.0 - std::pow(static_cast<double>(kBeta1), static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(kBeta2), static_cast<double>(steps_));

  std::size_t pos = 0;
  for (std::size_t e = 0; e < store.size(); ++e) {
    if (store.is_frozen(e)) continue;
    Tensor& p = store.at(e);
    const std::string& name = store.name_at(e);
    const float* d = direction.data() + pos;
    const float* anchor = nullptr;
    if (decay.anchor) {
      const Tensor& a = decay.anchor->get(name);
      if (a.shape != p.shape) throw ShapeError("weight decay anchor shape mismatch for '" + name + "'");
      anchor = a.data.data();
    }
    const float shrink = lr_ * decay.rate;

    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const float theta = p.data[i];
        float next = theta - lr_ * d[i];
        if (shrink != 0.0f) next -= shrink * (theta - (anchor ? anchor[i] : 0.0f));
        p.data[i] = next;
      }
    } else {
      auto mit = m_.try_emplace(name, Tensor::zeros(p.shape)).first;
      auto vit = v_.try_emplace(name, Tensor::zeros(p.shape)).first;
      float* m = mit->second.data.data();
      float* v = vit->second.data.data();
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const float theta = p.data[i];
        m[i] = kBeta1 * m[i] + (1.0f - kBeta1) * d[i];
        v[i] = kBeta2 * v[i] + (1.0f - kBeta2) * d[i] * d[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        float next = theta - static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + kEpsilon));
        if (shrink != 0.0f) next -= shrink * (theta - (anchor ? anchor[i] : 0.0f));
        p.data[i] = next;
      }
    }
    require_finite(p.data, "optimizer step");
    pos += p.numel();
  }
}

}  // namespace gemft
