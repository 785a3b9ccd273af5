#include <algorithm>
#include <cmath>
#include <map>

#include "gemft/tasks.hpp"

namespace gemft {

Var xsr_contrastive_loss(Tape& tape, Var src, Var tgt, float tau) {
  if (!(tau > 0.0f)) throw ConfigError("xsr temperature must be positive");
  const Tensor& s = tape.value(src);
  const Tensor& t = tape.value(tgt);
  if (s.rank() != 2 || s.shape != t.shape) throw ShapeError("xsr: source and target batches differ in shape");
  const int b = s.rows();
  if (b < 2) throw ShapeError("xsr: batch needs at least two pairs");
  std::vector<int> diag(b);
  for (int i = 0; i < b; ++i) diag[i] = i;
  const float inv = 1.0f / tau;
  const Var forward = ops::cross_entropy(tape, ops::scale(tape, ops::matmul_nt(tape, src, tgt), inv), diag);
  const Var backward = ops::cross_entropy(tape, ops::scale(tape, ops::matmul_nt(tape, tgt, src), inv), diag);
  return ops::scale(tape, ops::add(tape, forward, backward), 0.5f);
}

Var xsr_pair_loss(Tape& tape, const Encoder& model, const BoundModel& bound, std::span<const std::vector<int>> sources,
                  std::span<const std::vector<int>> targets, float tau) {
  if (sources.size() != targets.size()) throw ShapeError("xsr: sources and targets differ in count");
  const int n = static_cast<int>(sources.size());
  std::vector<std::vector<int>> both(sources.begin(), sources.end());
  both.insert(both.end(), targets.begin(), targets.end());
  const TokenBatch packed = TokenBatch::pack(both);
  const Var emb = model.sentence_embedding(tape, model.encode(tape, bound, packed), packed);
  std::vector<int> src_rows(n), tgt_rows(n);
  for (int i = 0; i < n; ++i) {
    src_rows[i] = i;
    tgt_rows[i] = n + i;
  }
  return xsr_contrastive_loss(tape, ops::gather_rows(tape, emb, src_rows), ops::gather_rows(tape, emb, tgt_rows), tau);
}

Tensor embed_sentences(const Encoder& model, std::span<const std::vector<int>> sentences, int chunk) {
  Tensor out({static_cast<int>(sentences.size()), model.config().hidden});
  for (std::size_t begin = 0; begin < sentences.size(); begin += chunk) {
    const std::size_t end = std::min(sentences.size(), begin + static_cast<std::size_t>(chunk));
    const Tensor part = model.sentence_embeddings(sentences.subspan(begin, end - begin));
    std::copy(part.data.begin(), part.data.end(), out.data.begin() + begin * model.config().hidden);
  }
  return out;
}

void RetrievalPool::validate() const {
  if (queries.rank() != 2 || candidates.rank() != 2) throw ShapeError("retrieval pool: embeddings must be matrices");
  if (queries.rows() == 0 || candidates.rows() == 0) throw ShapeError("retrieval pool is empty");
  if (queries.cols() != candidates.cols()) throw ShapeError("retrieval pool: embedding widths differ");
  if (static_cast<int>(query_ids.size()) != queries.rows() ||
      static_cast<int>(candidate_ids.size()) != candidates.rows())
    throw ShapeError("retrieval pool: one semantic id per embedding");
  std::map<int, int> seen;
  for (int id : candidate_ids) ++seen[id];
  for (int id : query_ids) {
    const auto it = seen.find(id);
    if (it == seen.end() || it->second != 1)
      throw ShapeError("retrieval pool: semantic id " + std::to_string(id) + " must appear once among candidates");
  }
}

std::vector<int> true_candidate_ranks(const RetrievalPool& pool) {
  pool.validate();
  const int q = pool.queries.rows(), c = pool.candidates.rows(), d = pool.queries.cols();
  std::map<int, int> index;
  for (int j = 0; j < c; ++j) index[pool.candidate_ids[j]] = j;
  std::vector<double> cnorm(c);
  for (int j = 0; j < c; ++j) {
    double s = 0;
    for (float v : pool.candidates.row(j)) s += static_cast<double>(v) * v;
    cnorm[j] = std::sqrt(s);
  }
  std::vector<int> ranks(q);
  std::vector<double> sim(c);
  for (int i = 0; i < q; ++i) {
    const auto qr = pool.queries.row(i);
    double qn = 0;
    for (float v : qr) qn += static_cast<double>(v) * v;
    qn = std::sqrt(qn);
    for (int j = 0; j < c; ++j) {
      const auto cr = pool.candidates.row(j);
      double s = 0;
      for (int k = 0; k < d; ++k) s += static_cast<double>(qr[k]) * cr[k];
      const double denom = qn * cnorm[j];
      sim[j] = denom > 0 ? s / denom : 0.0;
    }
    const int t = index.at(pool.query_ids[i]);
    int rank = 1;
    for (int j = 0; j < c; ++j)
      if (sim[j] > sim[t] || (sim[j] == sim[t] && j < t)) ++rank;
    ranks[i] = rank;
  }
  return ranks;
}

double precision_from_ranks(std::span<const int> ranks, int k) {
  if (k < 1) throw ConfigError("precision@k needs k >= 1");
  if (ranks.empty()) throw ShapeError("precision@k: empty pool");
  int hits = 0;
  for (int r : ranks) hits += r <= k;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double precision_at_k(const RetrievalPool& pool, int k) {
  if (k < 1) throw ConfigError("precision@k needs k >= 1");
  return precision_from_ranks(true_candidate_ranks(pool), k);
}

}  // namespace gemft
