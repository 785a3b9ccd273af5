#include <cmath>

#include "gemft/rng.hpp"
#include "gemft/tasks.hpp"

namespace gemft {

std::size_t MaskedBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.positions.size();
  return n;
}

MaskedSentence mlm_mask_sentence(std::span<const int> tokens, const MaskOptions& opt, std::uint64_t seed,
                                 int vocab_size) {
  if (!(opt.p >= 0.0 && opt.p <= 1.0)) throw ConfigError("mask probability must lie in [0, 1]");
  if (vocab_size <= kReservedIds) throw ConfigError("vocab_size too small for random replacement");
  Rng rng(seed);
  MaskedSentence out;
  out.input.assign(tokens.begin(), tokens.end());
  out.labels.assign(tokens.size(), kIgnoreLabel);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] != kPadId && rng.uniform() < opt.p) out.positions.push_back(static_cast<int>(i));
  if (opt.at_least_one && out.positions.empty()) {
    std::vector<int> real;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] != kPadId) real.push_back(static_cast<int>(i));
    if (!real.empty()) out.positions.push_back(real[rng.uniform_int(static_cast<int>(real.size()))]);
  }
  for (int i : out.positions) {
    out.labels[i] = tokens[i];
    if (opt.mask_only) {
      out.input[i] = kMaskId;
      continue;
    }
    const double r = rng.uniform();
    if (r < 0.8)
      out.input[i] = kMaskId;
    else if (r < 0.9)
      out.input[i] = kReservedIds + rng.uniform_int(vocab_size - kReservedIds);
  }
  return out;
}

MaskedBatch mlm_mask(std::span<const std::vector<int>> batch, const MaskOptions& opt, std::uint64_t seed,
                     int vocab_size, std::span<const int> keys) {
  if (!keys.empty() && keys.size() != batch.size()) throw ShapeError("mlm_mask: one key per sentence");
  MaskedBatch out;
  out.sentences.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::uint64_t key = keys.empty() ? i : static_cast<std::uint64_t>(keys[i]);
    out.sentences.push_back(mlm_mask_sentence(batch[i], opt, derive_seed(seed, "mask", key), vocab_size));
  }
  return out;
}

MlmInputs mlm_inputs(const MaskedBatch& batch) {
  MlmInputs in;
  int offset = 0;
  for (std::size_t s = 0; s < batch.sentences.size(); ++s) {
    const MaskedSentence& m = batch.sentences[s];
    in.inputs.push_back(m.input);
    for (int p : m.positions) {
      in.rows.push_back(offset + p);
      in.labels.push_back(m.labels[p]);
      in.owner.push_back(static_cast<int>(s));
    }
    offset += static_cast<int>(m.input.size());
  }
  return in;
}

Var mlm_loss(Tape& tape, const Encoder& model, const BoundModel& bound, const MaskedBatch& batch) {
  const MlmInputs in = mlm_inputs(batch);
  if (in.rows.empty()) throw ShapeError("mlm_loss: no masked positions");
  const TokenBatch packed = TokenBatch::pack(in.inputs);
  const Var h = model.encode(tape, bound, packed);
  return ops::cross_entropy(tape, model.mlm_logits(tape, bound, h, in.rows), in.labels);
}

double perplexity_from_logits(const Tensor& logits, std::span<const int> labels) {
  const std::vector<float> ce = row_cross_entropy(logits, labels);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ce.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    total += ce[i];
    ++n;
  }
  if (n == 0) throw ShapeError("perplexity: zero masked positions");
  return std::exp(total / static_cast<double>(n));
}

double perplexity(const Encoder& model, std::span<const KeyedSentence> corpus, double p, std::uint64_t seed,
                  int chunk) {
  if (corpus.empty()) throw ShapeError("perplexity: empty corpus");
  MaskOptions opt;
  opt.p = p;
  opt.mask_only = true;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t begin = 0; begin < corpus.size(); begin += chunk) {
    const std::size_t end = std::min(corpus.size(), begin + static_cast<std::size_t>(chunk));
    MaskedBatch batch;
    for (std::size_t i = begin; i < end; ++i)
      batch.sentences.push_back(mlm_mask_sentence(corpus[i].ids, opt, derive_seed(seed, "mask", corpus[i].id),
                                                  model.config().vocab_size));
    const MlmInputs in = mlm_inputs(batch);
    if (in.rows.empty()) continue;
    Tape tape;
    const BoundModel b = model.bind(tape);
    const TokenBatch packed = TokenBatch::pack(in.inputs);
    const Tensor& logits = tape.value(model.mlm_logits(tape, b, model.encode(tape, b, packed), in.rows));
    for (float ce : row_cross_entropy(logits, in.labels)) total += ce;
    n += in.rows.size();
  }
  if (n == 0) throw ShapeError("perplexity: zero masked positions");
  return std::exp(total / static_cast<double>(n));
}

}  // namespace gemft
