#include "gemft/tape.hpp"

#include <omp.h>

#include <cmath>
#include <memory>

#include "gemft/kernels.hpp"

namespace gemft {

Var Tape::constant(Tensor value) {
  require_finite(value.data, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const std::string& name, Tensor value) {
  require_finite(value.data, "parameter");
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  const int id = static_cast<int>(nodes_.size()) - 1;
  params_.emplace_back(name, id);
  return Var{this, id};
}

int Tape::check(Var v, const char* op) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw Error(std::string(op) + ": variable does not belong to this tape");
  return v.id;
}

const Tensor& Tape::value(Var v) const { return nodes_[check(v, "value")].value; }

const Tensor* Tape::grad(Var v) const {
  const Node& n = nodes_[check(v, "grad")];
  return n.grad.data.empty() ? nullptr : &n.grad;
}

Tensor& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
  require_finite(value.data, "kernel output");
  bool needs = false;
  for (int in : inputs) needs = needs || nodes_[in].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  const int root = check(loss, "backward");
  if (nodes_[root].value.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + to_string(nodes_[root].value.shape));
  if (backward_done_) throw Error("backward: tape already consumed");
  backward_done_ = true;
  grad_of(root).data[0] = 1.0f;
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
    n.backward(*this, id);
  }
}

Gradients Tape::parameter_gradients() const {
  Gradients out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    out.emplace(name, n.grad.data.empty() ? Tensor::zeros(n.value.shape) : n.grad);
  }
  return out;
}

namespace {

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(t.shape));
}

// Per-row log-sum-exp and CE in double; fixed row order.
double row_ce(const float* row, int cols, int label, std::vector<float>* probs) {
  float mx = row[0];
  for (int j = 1; j < cols; ++j) mx = std::fmax(mx, row[j]);
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
  if (probs) {
    probs->resize(cols);
    for (int j = 0; j < cols; ++j) (*probs)[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / sum);
  }
  return std::log(sum) + mx - row[label];
}

}  // namespace

std::vector<float> row_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "row_cross_entropy");
  const int n = logits.rows();
  const int c = logits.cols();
  if (static_cast<int>(labels.size()) != n) throw ShapeError("row_cross_entropy: label count mismatch");
  std::vector<float> out(n, 0.0f);
  for (int i = 0; i < n; ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    if (labels[i] < 0 || labels[i] >= c) throw ShapeError("row_cross_entropy: label out of range");
    out[i] = static_cast<float>(row_ce(logits.data.data() + static_cast<std::size_t>(i) * c, c, labels[i], nullptr));
  }
  return out;
}

namespace ops {

Var matmul(Tape& t, Var a, Var b) {
  const int ia = t.check(a, "matmul"), ib = t.check(b, "matmul");
  const Tensor& A = t.value_of(ia);
  const Tensor& B = t.value_of(ib);
  require_rank(A, 2, "matmul");
  require_rank(B, 2, "matmul");
  const int m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) throw ShapeError("matmul: " + to_string(A.shape) + " x " + to_string(B.shape));
  Tensor C({m, n});
  kernels::matmul(A.data.data(), B.data.data(), C.data.data(), m, k, n, false);
  return t.record(std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape& tp, int self) {
    const Tensor& dC = tp.out_grad(self);
    if (tp.requires_grad(ia))
      kernels::matmul_nt(dC.data.data(), tp.value_of(ib).data.data(), tp.grad_of(ia).data.data(), m, n, k, true);
    if (tp.requires_grad(ib))
      kernels::matmul_tn(tp.value_of(ia).data.data(), dC.data.data(), tp.grad_of(ib).data.data(), m, k, n, true);
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const int ia = t.check(a, "matmul_nt"), ib = t.check(b, "matmul_nt");
  const Tensor& A = t.value_of(ia);
  const Tensor& B = t.value_of(ib);
  require_rank(A, 2, "matmul_nt");
  require_rank(B, 2, "matmul_nt");
  const int m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) throw ShapeError("matmul_nt: " + to_string(A.shape) + " x " + to_string(B.shape) + "^T");
  Tensor C({m, n});
  kernels::matmul_nt(A.data.data(), B.data.data(), C.data.data(), m, k, n, false);
  return t.record(std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape& tp, int self) {
    const Tensor& dC = tp.out_grad(self);
    if (tp.requires_grad(ia))
      kernels::matmul(dC.data.data(), tp.value_of(ib).data.data(), tp.grad_of(ia).data.data(), m, n, k, true);
    if (tp.requires_grad(ib))
      kernels::matmul_tn(dC.data.data(), tp.value_of(ia).data.data(), tp.grad_of(ib).data.data(), m, n, k, true);
  });
}

Var add(Tape& t, Var a, Var b) {
  const int ia = t.check(a, "add"), ib = t.check(b, "add");
  const Tensor& A = t.value_of(ia);
  const Tensor& B = t.value_of(ib);
  if (A.shape != B.shape) throw ShapeError("add: " + to_string(A.shape) + " vs " + to_string(B.shape));
  Tensor C = A;
  for (std::size_t i = 0; i < C.numel(); ++i) C.data[i] += B.data[i];
  return t.record(std::move(C), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Tensor& dC = tp.out_grad(self);
    for (int in : {ia, ib}) {
      if (!tp.requires_grad(in)) continue;
      Tensor& g = tp.grad_of(in);
      for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += dC.data[i];
    }
  });
}

Var add_row(Tape& t, Var a, Var bias) {
  const int ia = t.check(a, "add_row"), ib = t.check(bias, "add_row");
  const Tensor& A = t.value_of(ia);
  const Tensor& B = t.value_of(ib);
  require_rank(A, 2, "add_row");
  const int m = A.rows(), n = A.cols();
  if (B.numel() != static_cast<std::size_t>(n)) throw ShapeError("add_row: bias " + to_string(B.shape) + " for " + to_string(A.shape));
  Tensor C = A;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) C.data[static_cast<std::size_t>(i) * n + j] += B.data[j];
  return t.record(std::move(C), {ia, ib}, [ia, ib, m, n](Tape& tp, int self) {
    const Tensor& dC = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      Tensor& g = tp.grad_of(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += dC.data[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& g = tp.grad_of(ib);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g.data[j] += dC.data[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const int ia = t.check(a, "mul"), ib = t.check(b, "mul");
  const Tensor& A = t.value_of(ia);
  const Tensor& B = t.value_of(ib);
  if (A.shape != B.shape) throw ShapeError("mul: " + to_string(A.shape) + " vs " + to_string(B.shape));
  Tensor C = A;
  for (std::size_t i = 0; i < C.numel(); ++i) C.data[i] *= B.data[i];
  return t.record(std::move(C), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Tensor& dC = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      Tensor& g = tp.grad_of(ia);
      const Tensor& other = tp.value_of(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += dC.data[i] * other.data[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& g = tp.grad_of(ib);
      const Tensor& other = tp.value_of(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += dC.data[i] * other.data[i];
    }
  });
}

Var scale(Tape& t, Var a, float s) {
  const int ia = t.check(a, "scale");
  Tensor C = t.value_of(ia);
  for (float& v : C.data) v *= s;
  return t.record(std::move(C), {ia}, [ia, s](Tape& tp, int self) {
    const Tensor& dC = tp.out_grad(self);
    Tensor& g = tp.grad_of(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += s * dC.data[i];
  });
}

Var gelu(Tape& t, Var a) {
  const int ia = t.check(a, "gelu");
  const Tensor& A = t.value_of(ia);
  Tensor C(A.shape);
  kernels::gelu(A.data.data(), C.data.data(), A.numel());
  return t.record(std::move(C), {ia}, [ia](Tape& tp, int self) {
    const Tensor& x = tp.value_of(ia);
    kernels::gelu_backward(x.data.data(), tp.out_grad(self).data.data(), tp.grad_of(ia).data.data(), x.numel());
  });
}

Var softmax(Tape& t, Var a) {
  const int ia = t.check(a, "softmax");
  const Tensor& A = t.value_of(ia);
  const int cols = A.shape.back();
  const int rows = static_cast<int>(A.numel() / cols);
  Tensor C(A.shape);
  kernels::softmax_rows(A.data.data(), C.data.data(), rows, cols);
  return t.record(std::move(C), {ia}, [ia, rows, cols](Tape& tp, int self) {
    kernels::softmax_rows_backward(tp.value_of(self).data.data(), tp.out_grad(self).data.data(),
                                   tp.grad_of(ia).data.data(), rows, cols);
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
  const int ix = t.check(x, "layer_norm"), ig = t.check(gain, "layer_norm"), ib = t.check(bias, "layer_norm");
  const Tensor& X = t.value_of(ix);
  require_rank(X, 2, "layer_norm");
  const int rows = X.rows(), cols = X.cols();
  if (t.value_of(ig).numel() != static_cast<std::size_t>(cols) || t.value_of(ib).numel() != static_cast<std::size_t>(cols))
    throw ShapeError("layer_norm: gain/bias size must equal " + std::to_string(cols));
  Tensor Y(X.shape);
  auto stats = std::make_shared<std::vector<float>>(2 * static_cast<std::size_t>(rows));
  kernels::layer_norm_rows(X.data.data(), t.value_of(ig).data.data(), t.value_of(ib).data.data(), Y.data.data(),
                           stats->data(), stats->data() + rows, rows, cols);
  return t.record(std::move(Y), {ix, ig, ib}, [ix, ig, ib, rows, cols, stats](Tape& tp, int self) {
    float* dx = tp.requires_grad(ix) ? tp.grad_of(ix).data.data() : nullptr;
    float* dg = tp.requires_grad(ig) ? tp.grad_of(ig).data.data() : nullptr;
    float* db = tp.requires_grad(ib) ? tp.grad_of(ib).data.data() : nullptr;
    kernels::layer_norm_rows_backward(tp.value_of(ix).data.data(), tp.value_of(ig).data.data(), stats->data(),
                                      stats->data() + rows, tp.out_grad(self).data.data(), dx, dg, db, rows, cols);
  });
}

Var embedding(Tape& t, Var table, std::span<const int> ids) {
  const int it = t.check(table, "embedding");
  const Tensor& T = t.value_of(it);
  require_rank(T, 2, "embedding");
  const int vocab = T.rows(), d = T.cols();
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  std::vector<int> saved(ids.begin(), ids.end());
  Tensor Y({static_cast<int>(ids.size()), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= vocab)
      throw ShapeError("embedding: id " + std::to_string(ids[r]) + " outside vocabulary of " + std::to_string(vocab));
    std::copy_n(T.data.data() + static_cast<std::size_t>(ids[r]) * d, d, Y.data.data() + r * d);
  }
  return t.record(std::move(Y), {it}, [it, d, saved = std::move(saved)](Tape& tp, int self) {
    const Tensor& dY = tp.out_grad(self);
    Tensor& g = tp.grad_of(it);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      float* dst = g.data.data() + static_cast<std::size_t>(saved[r]) * d;
      const float* src = dY.data.data() + r * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var gather_rows(Tape& t, Var x, std::span<const int> rows) {
  const int ix = t.check(x, "gather_rows");
  const Tensor& X = t.value_of(ix);
  require_rank(X, 2, "gather_rows");
  const int n = X.rows(), d = X.cols();
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  std::vector<int> saved(rows.begin(), rows.end());
  Tensor Y({static_cast<int>(rows.size()), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(X.data.data() + static_cast<std::size_t>(rows[r]) * d, d, Y.data.data() + r * d);
  }
  return t.record(std::move(Y), {ix}, [ix, d, saved = std::move(saved)](Tape& tp, int self) {
    const Tensor& dY = tp.out_grad(self);
    Tensor& g = tp.grad_of(ix);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      float* dst = g.data.data() + static_cast<std::size_t>(saved[r]) * d;
      const float* src = dY.data.data() + r * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var sum(Tape& t, Var a) {
  const int ia = t.check(a, "sum");
  double acc = 0.0;
  for (float v : t.value_of(ia).data) acc += v;
  return t.record(Tensor::scalar(static_cast<float>(acc)), {ia}, [ia](Tape& tp, int self) {
    const float g = tp.out_grad(self).data[0];
    for (float& v : tp.grad_of(ia).data) v += g;
  });
}

Var mean(Tape& t, Var a, int axis) {
  const int ia = t.check(a, "mean");
  const Tensor& A = t.value_of(ia);
  require_rank(A, 2, "mean");
  if (axis != 0 && axis != 1) throw ShapeError("mean: axis must be 0 or 1");
  const int rows = A.rows(), cols = A.cols();
  Tensor Y = axis == 0 ? Tensor({cols}) : Tensor({rows});
  if (axis == 0) {
    for (int j = 0; j < cols; ++j) {
      float acc = 0.0f;
      for (int i = 0; i < rows; ++i) acc += A.at(i, j);
      Y.data[j] = acc / static_cast<float>(rows);
    }
  } else {
    for (int i = 0; i < rows; ++i) {
      float acc = 0.0f;
      for (int j = 0; j < cols; ++j) acc += A.at(i, j);
      Y.data[i] = acc / static_cast<float>(cols);
    }
  }
  return t.record(std::move(Y), {ia}, [ia, axis, rows, cols](Tape& tp, int self) {
    const Tensor& dY = tp.out_grad(self);
    Tensor& g = tp.grad_of(ia);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        g.at(i, j) += axis == 0 ? dY.data[j] / static_cast<float>(rows) : dY.data[i] / static_cast<float>(cols);
  });
}

Var self_attention(Tape& t, Var q, Var k, Var v, const Segments& seg, int heads) {
  const int iq = t.check(q, "self_attention"), ik = t.check(k, "self_attention"), iv = t.check(v, "self_attention");
  const Tensor& Q = t.value_of(iq);
  const Tensor& K = t.value_of(ik);
  const Tensor& V = t.value_of(iv);
  require_rank(Q, 2, "self_attention");
  const int n = Q.rows(), d = Q.cols();
  if (K.shape != Q.shape || V.shape != Q.shape) throw ShapeError("self_attention: q/k/v shapes differ");
  if (seg.rows() != n || static_cast<int>(seg.valid.size()) != n) throw ShapeError("self_attention: segments do not cover the rows");
  if (heads <= 0 || d % heads != 0) throw ShapeError("self_attention: hidden size not divisible by heads");
  const int dh = d / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  const int nseg = seg.count();

  // Probabilities per (segment, head): len x len blocks, laid out consecutively.
  auto prob_offsets = std::make_shared<std::vector<std::size_t>>(nseg + 1, 0);
  for (int s = 0; s < nseg; ++s) {
    const std::size_t len = seg.length(s);
    (*prob_offsets)[s + 1] = (*prob_offsets)[s] + len * len * heads;
  }
  auto probs = std::make_shared<std::vector<float>>(prob_offsets->back());
  auto segs = std::make_shared<Segments>(seg);
  Tensor O({n, d});

  bool empty_segment = false;
#pragma omp parallel for schedule(dynamic, 4) if (nseg > 8 && !omp_in_parallel())
  for (int s = 0; s < nseg; ++s) {
    const int base = seg.offsets[s];
    const int len = seg.length(s);
    bool any_valid = false;
    for (int j = 0; j < len; ++j) any_valid = any_valid || seg.valid[base + j];
    if (!any_valid) {
      empty_segment = true;
      continue;
    }
    for (int h = 0; h < heads; ++h) {
      float* P = probs->data() + (*prob_offsets)[s] + static_cast<std::size_t>(h) * len * len;
      const int c0 = h * dh;
      for (int i = 0; i < len; ++i) {
        const float* qi = Q.data.data() + static_cast<std::size_t>(base + i) * d + c0;
        float* Pi = P + static_cast<std::size_t>(i) * len;
        float mx = -INFINITY;
        for (int j = 0; j < len; ++j) {
          if (!seg.valid[base + j]) continue;
          const float* kj = K.data.data() + static_cast<std::size_t>(base + j) * d + c0;
          float acc = 0.0f;
          for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          Pi[j] = acc * inv_sqrt;
          mx = std::fmax(mx, Pi[j]);
        }
        float total = 0.0f;
        for (int j = 0; j < len; ++j) {
          Pi[j] = seg.valid[base + j] ? std::exp(Pi[j] - mx) : 0.0f;
          total += Pi[j];
        }
        const float inv = 1.0f / total;
        float* oi = O.data.data() + static_cast<std::size_t>(base + i) * d + c0;
        for (int j = 0; j < len; ++j) {
          Pi[j] *= inv;
          if (Pi[j] == 0.0f) continue;
          const float* vj = V.data.data() + static_cast<std::size_t>(base + j) * d + c0;
          for (int c = 0; c < dh; ++c) oi[c] += Pi[j] * vj[c];
        }
      }
    }
  }
  if (empty_segment) throw ShapeError("self_attention: segment without any non-PAD position");

  return t.record(std::move(O), {iq, ik, iv}, [iq, ik, iv, heads, dh, d, inv_sqrt, probs, prob_offsets, segs](Tape& tp, int self) {
    const Tensor& dO = tp.out_grad(self);
    const Tensor& Qv = tp.value_of(iq);
    const Tensor& Kv = tp.value_of(ik);
    const Tensor& Vv = tp.value_of(iv);
    float* dQ = tp.requires_grad(iq) ? tp.grad_of(iq).data.data() : nullptr;
    float* dK = tp.requires_grad(ik) ? tp.grad_of(ik).data.data() : nullptr;
    float* dV = tp.requires_grad(iv) ? tp.grad_of(iv).data.data() : nullptr;
    const Segments& sg = *segs;
    const int ns = sg.count();
#pragma omp parallel for schedule(dynamic, 4) if (ns > 8 && !omp_in_parallel())
    for (int s = 0; s < ns; ++s) {
      const int base = sg.offsets[s];
      const int len = sg.length(s);
      std::vector<float> dP(len), dS(len);
      for (int h = 0; h < heads; ++h) {
        const float* P = probs->data() + (*prob_offsets)[s] + static_cast<std::size_t>(h) * len * len;
        const int c0 = h * dh;
        for (int i = 0; i < len; ++i) {
          const float* Pi = P + static_cast<std::size_t>(i) * len;
          const float* doi = dO.data.data() + static_cast<std::size_t>(base + i) * d + c0;
          float dot = 0.0f;
          for (int j = 0; j < len; ++j) {
            const float* vj = Vv.data.data() + static_cast<std::size_t>(base + j) * d + c0;
            float acc = 0.0f;
            for (int c = 0; c < dh; ++c) acc += doi[c] * vj[c];
            dP[j] = acc;
            dot += Pi[j] * acc;
          }
          for (int j = 0; j < len; ++j) dS[j] = Pi[j] * (dP[j] - dot) * inv_sqrt;
          for (int j = 0; j < len; ++j) {
            if (Pi[j] == 0.0f) continue;
            if (dV) {
              float* dvj = dV + static_cast<std::size_t>(base + j) * d + c0;
              for (int c = 0; c < dh; ++c) dvj[c] += Pi[j] * doi[c];
            }
            const float* kj = Kv.data.data() + static_cast<std::size_t>(base + j) * d + c0;
            const float* qi = Qv.data.data() + static_cast<std::size_t>(base + i) * d + c0;
            if (dQ) {
              float* dqi = dQ + static_cast<std::size_t>(base + i) * d + c0;
              for (int c = 0; c < dh; ++c) dqi[c] += dS[j] * kj[c];
            }
            if (dK) {
              float* dkj = dK + static_cast<std::size_t>(base + j) * d + c0;
              for (int c = 0; c < dh; ++c) dkj[c] += dS[j] * qi[c];
            }
          }
        }
      }
    }
  });
}

Var segment_mean(Tape& t, Var x, const Segments& seg) {
  const int ix = t.check(x, "segment_mean");
  const Tensor& X = t.value_of(ix);
  require_rank(X, 2, "segment_mean");
  const int d = X.cols();
  if (seg.rows() != X.rows() || static_cast<int>(seg.valid.size()) != X.rows())
    throw ShapeError("segment_mean: segments do not cover the rows");
  const int ns = seg.count();
  std::vector<float> counts(ns, 0.0f);
  Tensor Y({ns, d});
  for (int s = 0; s < ns; ++s) {
    for (int r = seg.offsets[s]; r < seg.offsets[s + 1]; ++r) {
      if (!seg.valid[r]) continue;
      counts[s] += 1.0f;
      for (int j = 0; j < d; ++j) Y.at(s, j) += X.at(r, j);
    }
    if (counts[s] == 0.0f) throw ShapeError("segment_mean: segment without any non-PAD position");
    for (int j = 0; j < d; ++j) Y.at(s, j) /= counts[s];
  }
  auto segs = std::make_shared<Segments>(seg);
  return t.record(std::move(Y), {ix}, [ix, d, segs, counts = std::move(counts)](Tape& tp, int self) {
    const Tensor& dY = tp.out_grad(self);
    Tensor& g = tp.grad_of(ix);
    for (int s = 0; s < segs->count(); ++s)
      for (int r = segs->offsets[s]; r < segs->offsets[s + 1]; ++r) {
        if (!segs->valid[r]) continue;
        for (int j = 0; j < d; ++j) g.at(r, j) += dY.at(s, j) / counts[s];
      }
  });
}

Var l2_normalize_rows(Tape& t, Var x) {
  const int ix = t.check(x, "l2_normalize_rows");
  const Tensor& X = t.value_of(ix);
  require_rank(X, 2, "l2_normalize_rows");
  const int rows = X.rows(), cols = X.cols();
  std::vector<float> norms(rows);
  Tensor Y(X.shape);
  for (int i = 0; i < rows; ++i) {
    double ss = 0.0;
    for (int j = 0; j < cols; ++j) ss += static_cast<double>(X.at(i, j)) * X.at(i, j);
    norms[i] = static_cast<float>(std::sqrt(ss));
    if (!(norms[i] > 0.0f)) throw NumericError("l2_normalize_rows: zero-norm row");
    for (int j = 0; j < cols; ++j) Y.at(i, j) = X.at(i, j) / norms[i];
  }
  return t.record(std::move(Y), {ix}, [ix, rows, cols, norms = std::move(norms)](Tape& tp, int self) {
    const Tensor& dY = tp.out_grad(self);
    const Tensor& Yv = tp.value_of(self);
    Tensor& g = tp.grad_of(ix);
    for (int i = 0; i < rows; ++i) {
      float dot = 0.0f;
      for (int j = 0; j < cols; ++j) dot += Yv.at(i, j) * dY.at(i, j);
      for (int j = 0; j < cols; ++j) g.at(i, j) += (dY.at(i, j) - Yv.at(i, j) * dot) / norms[i];
    }
  });
}

Var weighted_cross_entropy(Tape& t, Var logits, std::span<const int> labels, std::span<const float> weights) {
  const int il = t.check(logits, "cross_entropy");
  const Tensor& L = t.value_of(il);
  require_rank(L, 2, "cross_entropy");
  const int n = L.rows(), c = L.cols();
  if (static_cast<int>(labels.size()) != n || static_cast<int>(weights.size()) != n)
    throw ShapeError("cross_entropy: labels/weights must have one entry per row");
  double total = 0.0;
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * c, 0.0f);
  std::vector<float> row_probs;
  for (int i = 0; i < n; ++i) {
    if (labels[i] == kIgnoreLabel) {
      if (weights[i] != 0.0f) throw Error("cross_entropy: ignored row carries non-zero weight");
      continue;
    }
    if (labels[i] < 0 || labels[i] >= c) throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    total += weights[i] * row_ce(L.data.data() + static_cast<std::size_t>(i) * c, c, labels[i], &row_probs);
    std::copy(row_probs.begin(), row_probs.end(), probs->begin() + static_cast<std::ptrdiff_t>(i) * c);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<float> w(weights.begin(), weights.end());
  return t.record(Tensor::scalar(static_cast<float>(total)), {il},
                  [il, n, c, probs, lab = std::move(lab), w = std::move(w)](Tape& tp, int self) {
                    const float up = tp.out_grad(self).data[0];
                    Tensor& g = tp.grad_of(il);
                    for (int i = 0; i < n; ++i) {
                      if (lab[i] == kIgnoreLabel || w[i] == 0.0f) continue;
                      const float s = up * w[i];
                      float* gi = g.data.data() + static_cast<std::size_t>(i) * c;
                      const float* pi = probs->data() + static_cast<std::size_t>(i) * c;
                      for (int j = 0; j < c; ++j) gi[j] += s * pi[j];
                      gi[lab[i]] -= s;
                    }
                  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  int counted = 0;
  for (int l : labels) counted += l != kIgnoreLabel;
  if (counted == 0) throw Error("cross_entropy: no non-ignored positions");
  std::vector<float> w(labels.size(), 0.0f);
  const float each = 1.0f / static_cast<float>(counted);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kIgnoreLabel) w[i] = each;
  return weighted_cross_entropy(t, logits, labels, w);
}

}  // namespace ops
}  // namespace gemft
