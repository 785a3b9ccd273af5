#include <cmath>
#include <vector>

#include "doctest.h"
#include "gemft/model.hpp"
#include "gemft/optimizer.hpp"

using namespace gemft;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 40;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_seq_len = 8;
  c.tag_set_size = 5;
  return c;
}

// Independent count: walk the store and add up tensor sizes.
std::size_t counted_scalars(const Encoder& m) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    std::size_t e = 1;
    for (int d : m.params().at(i).shape) e *= d;
    n += e;
  }
  return n;
}

}  // namespace

TEST_CASE("init is deterministic given the seed") {
  const Encoder a = Encoder::init(small_config(), 11);
  const Encoder b = Encoder::init(small_config(), 11);
  const Encoder c = Encoder::init(small_config(), 12);
  CHECK(a.params().bitwise_equal(b.params()));
  CHECK_FALSE(a.params().bitwise_equal(c.params()));
}

TEST_CASE("init follows the stated scheme") {
  const Encoder m = Encoder::init(small_config(), 1);
  for (float g : m.params().get("layer0.ln1.gain").data) CHECK(g == 1.0f);
  for (float g : m.params().get("emb_ln.gain").data) CHECK(g == 1.0f);
  for (float b : m.params().get("layer1.ln2.bias").data) CHECK(b == 0.0f);
  for (float b : m.params().get("layer1.attn.wq.bias").data) CHECK(b == 0.0f);
  float mx = 0.0f;
  double ss = 0.0;
  const auto& w = m.params().get("tok_emb").data;
  for (float v : w) {
    mx = std::max(mx, std::fabs(v));
    ss += v * v;
  }
  CHECK(mx <= 0.04f);
  CHECK(std::sqrt(ss / w.size()) == doctest::Approx(0.0176).epsilon(0.15));  // σ of a 2σ-truncated normal ≈ 0.88σ
}

TEST_CASE("parameter count of the default-sized model") {
  ModelConfig c;
  c.vocab_size = 200;
  c.hidden = 64;
  c.layers = 2;
  c.heads = 2;
  c.max_seq_len = 16;
  c.tag_set_size = 12;
  const Encoder m = Encoder::init(c, 0);
  CHECK(counted_scalars(m) == parameter_count(c));
  CHECK(parameter_count(c) == 127700);
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(Encoder::init(c, 0), ConfigError);
  c = small_config();
  c.vocab_size = 3;
  CHECK_THROWS_AS(Encoder::init(c, 0), ConfigError);
}

TEST_CASE("encode shape, finiteness, and errors") {
  const Encoder m = Encoder::init(small_config(), 2);
  const std::vector<int> toks{5, 6, 7, 8, 9};
  const Tensor h = m.encode(toks);
  CHECK(h.shape == Shape{5, 16});
  for (float v : h.data) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(m.encode(std::vector<int>{}), ShapeError);
  CHECK_THROWS_AS(m.encode(std::vector<int>{5, 40}), ShapeError);
  CHECK_THROWS_AS(m.encode(std::vector<int>(9, 5)), ShapeError);
}

TEST_CASE("PAD tail does not change non-PAD outputs") {
  const Encoder m = Encoder::init(small_config(), 3);
  const Tensor plain = m.encode(std::vector<int>{5, 6, 7});
  const Tensor padded = m.encode(std::vector<int>{5, 6, 7, kPadId, kPadId});
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 16; ++j) CHECK(std::fabs(plain.at(r, j) - padded.at(r, j)) <= 1e-6f);
}

TEST_CASE("heads") {
  const Encoder m = Encoder::init(small_config(), 4);
  const std::vector<std::vector<int>> sents{{5, 6, 7, kPadId}, {9}, {10, 11, 12, 13, 14}};
  Tape t;
  const BoundModel b = m.bind(t);
  const TokenBatch batch = TokenBatch::pack(sents);
  const Var h = m.encode(t, b, batch);
  CHECK(t.value(m.apply_head(t, b, h, Head::tag, batch)).shape == Shape{10, 5});
  CHECK(t.value(m.apply_head(t, b, h, Head::mlm, batch)).shape == Shape{10, 40});
  const Tensor e = t.value(m.apply_head(t, b, h, Head::sentence, batch));
  REQUIRE(e.shape == Shape{3, 16});
  for (int s = 0; s < 3; ++s) {
    double n = 0;
    for (float v : e.row(s)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
  }
  // single token: embedding is the normalised hidden row
  const Tensor one = m.encode(std::vector<int>{9});
  double n = 0;
  for (float v : one.data) n += v * v;
  for (int j = 0; j < 16; ++j) CHECK(e.at(1, j) == doctest::Approx(one.data[j] / std::sqrt(n)).epsilon(1e-5));
}

TEST_CASE("encode is batch-order independent") {
  const Encoder m = Encoder::init(small_config(), 5);
  const std::vector<std::vector<int>> ab{{5, 6, 7}, {8, 9, 10, 11}};
  const std::vector<std::vector<int>> ba{{8, 9, 10, 11}, {5, 6, 7}};
  const Tensor e1 = m.sentence_embeddings(ab);
  const Tensor e2 = m.sentence_embeddings(ba);
  for (int j = 0; j < 16; ++j) {
    CHECK(e1.at(0, j) == e2.at(1, j));
    CHECK(e1.at(1, j) == e2.at(0, j));
  }
}

TEST_CASE("freeze_bottom") {
  Encoder m = Encoder::init(small_config(), 6);
  m.freeze_bottom(0);
  CHECK(m.frozen_mask().empty());
  m.freeze_bottom(2);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const std::string& name = m.params().name_at(i);
    const bool head = name.starts_with("mlm.") || name.starts_with("tag.");
    CHECK(m.params().is_frozen(i) == !head);
  }
  CHECK_THROWS_AS(m.freeze_bottom(3), ConfigError);
  CHECK_THROWS_AS(m.freeze_bottom(-1), ConfigError);
}

TEST_CASE("frozen bottom layer stays bitwise equal through 100 training steps") {
  Encoder m = Encoder::init(small_config(), 7);
  const ParameterStore snapshot = m.params();
  m.freeze_bottom(1);
  Optimizer opt(OptimizerKind::sgd, 0.5f);
  const std::vector<std::vector<int>> sents{{5, 6, 7, 8}, {9, 10, 11}};
  const std::vector<int> labels{0, 1, 2, 3, 4, 0, 1};
  for (int step = 0; step < 100; ++step) {
    Tape t;
    const BoundModel b = m.bind(t);
    const TokenBatch batch = TokenBatch::pack(sents);
    const Var loss = ops::cross_entropy(t, m.tag_logits(t, b, m.encode(t, b, batch)), labels);
    t.backward(loss);
    opt.step(m.params(), flatten_gradients(t.parameter_gradients(), m.params()));
  }
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const std::string& name = m.params().name_at(i);
    if (name.starts_with("mlm.")) continue;  // unreachable from the tagging loss
    const bool bottom = name.starts_with("tok_emb") || name.starts_with("pos_emb") || name.starts_with("emb_ln") ||
                        name.starts_with("layer0.");
    CHECK(bitwise_equal(m.params().at(i), snapshot.get(name)) == bottom);
  }
}
