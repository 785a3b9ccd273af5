#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gemft/tensor.hpp"

namespace gemft {

// Label value skipped by cross-entropy.
inline constexpr int kIgnoreLabel = -100;

class Tape;

// Handle to a node recorded on a tape.
struct Var {
  const Tape* tape = nullptr;
  int id = -1;
};

// Gradients keyed by parameter name.
using Gradients = std::map<std::string, Tensor>;

// Records kernel applications of one forward pass and replays them in
// reverse for backward. One tape per training step; tapes are not reused.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Trainable leaf; its gradient is reported under `name`.
  Var parameter(const std::string& name, Tensor value);

  const Tensor& value(Var v) const;
  // Null until backward reached the node.
  const Tensor* grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and propagates in exact reverse recording order.
  void backward(Var loss);

  // One entry per registered parameter; parameters backward never reached get zeros.
  Gradients parameter_gradients() const;

  std::size_t size() const { return nodes_.size(); }

  // Used by ops.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn fn);
  int check(Var v, const char* op) const;
  const Tensor& value_of(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of node `id`, zero-allocated on first use.
  Tensor& grad_of(int id);
  const Tensor& out_grad(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;
  bool backward_done_ = false;
};

// Packed batch layout: sentence s occupies rows [offsets[s], offsets[s+1]).
struct Segments {
  std::vector<int> offsets{0};
  // One flag per row; false marks a PAD position.
  std::vector<std::uint8_t> valid;

  int count() const { return static_cast<int>(offsets.size()) - 1; }
  int rows() const { return offsets.back(); }
  int length(int s) const { return offsets[s + 1] - offsets[s]; }
};

namespace ops {

Var matmul(Tape& t, Var a, Var b);
// a * b^T
Var matmul_nt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
// a[m,n] + bias[n] on every row
Var add_row(Tape& t, Var a, Var bias);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, float s);
Var gelu(Tape& t, Var a);
Var softmax(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gain, Var bias);
// rows of table[V,d] selected by ids
Var embedding(Tape& t, Var table, std::span<const int> ids);
Var gather_rows(Tape& t, Var x, std::span<const int> rows);
Var sum(Tape& t, Var a);
// Mean of a 2-D tensor over `axis` (0 → [cols], 1 → [rows]).
Var mean(Tape& t, Var a, int axis);
// Multi-head scaled dot-product self-attention within each segment; PAD keys masked.
Var self_attention(Tape& t, Var q, Var k, Var v, const Segments& seg, int heads);
// Mean of the valid rows of each segment → [segments, cols].
Var segment_mean(Tape& t, Var x, const Segments& seg);
Var l2_normalize_rows(Tape& t, Var x);
// Mean cross-entropy over rows whose label is not kIgnoreLabel.
Var cross_entropy(Tape& t, Var logits, std::span<const int> labels);
// Sum over rows of weight[i] * CE_i; ignored rows must carry zero weight.
Var weighted_cross_entropy(Tape& t, Var logits, std::span<const int> labels, std::span<const float> weights);

}  // namespace ops

// Per-row cross-entropy values without recording anything (evaluation path).
std::vector<float> row_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace gemft
