#include <string>

#include "gemft/hash.hpp"
#include "gemft/model.hpp"
#include "gemft/rng.hpp"

namespace gemft {

namespace {

std::string layer_name(int layer, const char* suffix) { return "layer" + std::to_string(layer) + "." + suffix; }

constexpr float kInitSigma = 0.02f;

}  // namespace

void ModelConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (vocab_size <= kReservedIds) fail("vocab_size must exceed the 3 reserved ids (PAD, MASK, UNK)");
  if (hidden <= 0) fail("hidden must be positive");
  if (layers <= 0) fail("layers must be positive");
  if (heads <= 0) fail("heads must be positive");
  if (hidden > 0 && heads > 0 && hidden % heads != 0) fail("hidden must be divisible by heads");
  if (max_seq_len <= 0) fail("max_seq_len must be positive");
  if (tag_set_size <= 0) fail("tag_set_size must be positive");
  if (!problems.empty()) throw ConfigError("invalid model config: " + problems);
}

std::uint64_t ModelConfig::hash() const {
  Fnv1a h;
  for (int v : {vocab_size, hidden, layers, heads, max_seq_len, tag_set_size}) h.update_pod(static_cast<std::int32_t>(v));
  return h.digest();
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden, v = c.vocab_size, t = c.tag_set_size;
  const std::size_t per_layer = 4 * (d * d + d)  // q, k, v, output projections
                                + 2 * d          // ln1
                                + (d * 4 * d + 4 * d) + (4 * d * d + d)  // feed-forward
                                + 2 * d;         // ln2
  return v * d + static_cast<std::size_t>(c.max_seq_len) * d + 2 * d + c.layers * per_layer + (d * v + v) + (d * t + t);
}

TokenBatch TokenBatch::pack(std::span<const std::vector<int>> sentences) {
  TokenBatch b;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      b.ids.push_back(s[i]);
      b.positions.push_back(static_cast<int>(i));
      b.segments.valid.push_back(s[i] != kPadId);
    }
    b.segments.offsets.push_back(static_cast<int>(b.ids.size()));
  }
  return b;
}

Var BoundModel::operator[](const std::string& name) const { return vars[store->index_of(name)]; }

Encoder Encoder::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Encoder m;
  m.config_ = config;
  const int d = config.hidden;
  Rng rng(seed);
  auto normal = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (float& x : t.data) x = static_cast<float>(rng.truncated_normal(kInitSigma));
    return t;
  };
  auto& p = m.params_;
  p.add("tok_emb", normal({config.vocab_size, d}));
  p.add("pos_emb", normal({config.max_seq_len, d}));
  p.add("emb_ln.gain", Tensor({d}, 1.0f));
  p.add("emb_ln.bias", Tensor({d}));
  for (int l = 0; l < config.layers; ++l) {
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      p.add(layer_name(l, w), normal({d, d}));
      p.add(layer_name(l, w) + ".bias", Tensor({d}));
    }
    p.add(layer_name(l, "ln1.gain"), Tensor({d}, 1.0f));
    p.add(layer_name(l, "ln1.bias"), Tensor({d}));
    p.add(layer_name(l, "ffn.w1"), normal({d, 4 * d}));
    p.add(layer_name(l, "ffn.w1.bias"), Tensor({4 * d}));
    p.add(layer_name(l, "ffn.w2"), normal({4 * d, d}));
    p.add(layer_name(l, "ffn.w2.bias"), Tensor({d}));
    p.add(layer_name(l, "ln2.gain"), Tensor({d}, 1.0f));
    p.add(layer_name(l, "ln2.bias"), Tensor({d}));
  }
  p.add("mlm.w", normal({d, config.vocab_size}));
  p.add("mlm.w.bias", Tensor({config.vocab_size}));
  p.add("tag.w", normal({d, config.tag_set_size}));
  p.add("tag.w.bias", Tensor({config.tag_set_size}));
  return m;
}

void Encoder::freeze_bottom(int n) {
  if (n < 0 || n > config_.layers)
    throw ConfigError("freeze_bottom: n=" + std::to_string(n) + " outside [0, " + std::to_string(config_.layers) + "]");
  params_.clear_frozen();
  if (n == 0) return;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_.name_at(i);
    bool bottom = name.starts_with("tok_emb") || name.starts_with("pos_emb") || name.starts_with("emb_ln.");
    for (int l = 0; l < n && !bottom; ++l) bottom = name.starts_with("layer" + std::to_string(l) + ".");
    if (bottom) params_.set_frozen(name, true);
  }
}

void Encoder::reinit_tag_head(std::uint64_t seed) {
  Rng rng(seed);
  for (float& x : params_.get("tag.w").data) x = static_cast<float>(rng.truncated_normal(kInitSigma));
  for (float& x : params_.get("tag.w.bias").data) x = 0.0f;
}

BoundModel Encoder::bind(Tape& tape) const { return BoundModel{params_.bind(tape), &params_}; }

void Encoder::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw ShapeError("encode: empty sequence");
  if (static_cast<int>(tokens.size()) > config_.max_seq_len)
    throw ShapeError("encode: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  for (int id : tokens)
    if (id < 0 || id >= config_.vocab_size) throw ShapeError("encode: token id " + std::to_string(id) + " out of range");
}

Var Encoder::encode(Tape& tape, const BoundModel& b, const TokenBatch& batch) const {
  for (int s = 0; s < batch.sentence_count(); ++s)
    check_tokens(std::span<const int>(batch.ids).subspan(batch.segments.offsets[s], batch.segments.length(s)));
  if (batch.sentence_count() == 0) throw ShapeError("encode: empty batch");

  Var x = ops::add(tape, ops::embedding(tape, b["tok_emb"], batch.ids), ops::embedding(tape, b["pos_emb"], batch.positions));
  x = ops::layer_norm(tape, x, b["emb_ln.gain"], b["emb_ln.bias"]);
  auto linear = [&](Var in, const std::string& w) {
    return ops::add_row(tape, ops::matmul(tape, in, b[w]), b[w + ".bias"]);
  };
  for (int l = 0; l < config_.layers; ++l) {
    const Var q = linear(x, layer_name(l, "attn.wq"));
    const Var k = linear(x, layer_name(l, "attn.wk"));
    const Var v = linear(x, layer_name(l, "attn.wv"));
    const Var att = ops::self_attention(tape, q, k, v, batch.segments, config_.heads);
    const Var h = ops::layer_norm(tape, ops::add(tape, x, linear(att, layer_name(l, "attn.wo"))), b[layer_name(l, "ln1.gain")],
                                  b[layer_name(l, "ln1.bias")]);
    const Var f = linear(ops::gelu(tape, linear(h, layer_name(l, "ffn.w1"))), layer_name(l, "ffn.w2"));
    x = ops::layer_norm(tape, ops::add(tape, h, f), b[layer_name(l, "ln2.gain")], b[layer_name(l, "ln2.bias")]);
  }
  return x;
}

Var Encoder::mlm_logits(Tape& tape, const BoundModel& b, Var hidden, std::span<const int> rows) const {
  const Var picked = ops::gather_rows(tape, hidden, rows);
  return ops::add_row(tape, ops::matmul(tape, picked, b["mlm.w"]), b["mlm.w.bias"]);
}

Var Encoder::tag_logits(Tape& tape, const BoundModel& b, Var hidden) const {
  return ops::add_row(tape, ops::matmul(tape, hidden, b["tag.w"]), b["tag.w.bias"]);
}

Var Encoder::sentence_embedding(Tape& tape, Var hidden, const TokenBatch& batch) const {
  return ops::l2_normalize_rows(tape, ops::segment_mean(tape, hidden, batch.segments));
}

Var Encoder::apply_head(Tape& tape, const BoundModel& b, Var hidden, Head head, const TokenBatch& batch) const {
  switch (head) {
    case Head::mlm: {
      std::vector<int> rows(batch.ids.size());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
      return mlm_logits(tape, b, hidden, rows);
    }
    case Head::tag:
      return tag_logits(tape, b, hidden);
    case Head::sentence:
      return sentence_embedding(tape, hidden, batch);
  }
  throw Error("apply_head: unknown head");
}

Tensor Encoder::encode(std::span<const int> tokens) const {
  Tape tape;
  const BoundModel b = bind(tape);
  const std::vector<int> one(tokens.begin(), tokens.end());
  const TokenBatch batch = TokenBatch::pack(std::span<const std::vector<int>>(&one, 1));
  return tape.value(encode(tape, b, batch));
}

Tensor Encoder::sentence_embeddings(std::span<const std::vector<int>> sentences) const {
  Tape tape;
  const BoundModel b = bind(tape);
  const TokenBatch batch = TokenBatch::pack(sentences);
  return tape.value(sentence_embedding(tape, encode(tape, b, batch), batch));
}

}  // namespace gemft
