#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gemft/rng.hpp"
#include "gemft/synth.hpp"
#include "gemft/tasks.hpp"

using namespace gemft;

namespace {

Tensor unit_rows(Rng& rng, int n, int d) {
  Tensor t({n, d});
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < d; ++j) {
      t.data[i * d + j] = static_cast<float>(rng.normal());
      s += t.data[i * d + j] * t.data[i * d + j];
    }
    for (int j = 0; j < d; ++j) t.data[i * d + j] = static_cast<float>(t.data[i * d + j] / std::sqrt(s));
  }
  return t;
}

double xsr_value(const Tensor& a, const Tensor& b, float tau) {
  Tape t;
  return t.value(xsr_contrastive_loss(t, t.constant(a), t.constant(b), tau)).data[0];
}

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 30;
  c.hidden = 16;
  c.layers = 1;
  c.heads = 2;
  c.max_seq_len = 8;
  c.tag_set_size = kTagSpaceSize;
  return c;
}

}  // namespace

TEST_CASE("mlm_mask edge cases") {
  const std::vector<std::vector<int>> batch{{5, 6, 7, 8, kPadId}, {9, 10, 11}};
  MaskOptions opt;
  opt.p = 0.0;
  const MaskedBatch none = mlm_mask(batch, opt, 1, 30);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    CHECK(none.sentences[s].input == batch[s]);
    for (int l : none.sentences[s].labels) CHECK(l == kIgnoreLabel);
  }
  opt.p = 1.0;
  opt.mask_only = true;
  const MaskedBatch all = mlm_mask(batch, opt, 1, 30);
  for (std::size_t s = 0; s < batch.size(); ++s)
    for (std::size_t i = 0; i < batch[s].size(); ++i) {
      if (batch[s][i] == kPadId) {
        CHECK(all.sentences[s].input[i] == kPadId);
        CHECK(all.sentences[s].labels[i] == kIgnoreLabel);
      } else {
        CHECK(all.sentences[s].input[i] == kMaskId);
        CHECK(all.sentences[s].labels[i] == batch[s][i]);
      }
    }
  opt.p = 1.5;
  CHECK_THROWS_AS(mlm_mask(batch, opt, 1, 30), ConfigError);
}

TEST_CASE("mlm_mask is deterministic and keyed") {
  std::vector<std::vector<int>> batch;
  for (int i = 0; i < 50; ++i) batch.push_back({3 + i % 20, 4, 5, 6, 7, 8, 9});
  MaskOptions opt;
  const MaskedBatch a = mlm_mask(batch, opt, 42, 30);
  const MaskedBatch b = mlm_mask(batch, opt, 42, 30);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    CHECK(a.sentences[s].input == b.sentences[s].input);
    CHECK(a.sentences[s].positions == b.sentences[s].positions);
  }
  // keying by id makes a sentence's mask independent of its position
  std::vector<int> keys(batch.size());
  std::iota(keys.begin(), keys.end(), 100);
  std::vector<std::vector<int>> rev(batch.rbegin(), batch.rend());
  std::vector<int> rkeys(keys.rbegin(), keys.rend());
  const MaskedBatch k1 = mlm_mask(batch, opt, 7, 30, keys);
  const MaskedBatch k2 = mlm_mask(rev, opt, 7, 30, rkeys);
  for (std::size_t s = 0; s < batch.size(); ++s)
    CHECK(k1.sentences[s].input == k2.sentences[batch.size() - 1 - s].input);
}

TEST_CASE("mlm_mask statistics") {
  std::vector<std::vector<int>> batch(4000, std::vector<int>{10, 11, 12, 13, 14});
  MaskOptions opt;
  const MaskedBatch m = mlm_mask(batch, opt, 3, 30);
  std::size_t selected = 0, masked = 0, kept = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& ms = m.sentences[s];
    for (std::size_t i = 0; i < batch[s].size(); ++i) {
      const bool sel = ms.labels[i] != kIgnoreLabel;
      CHECK(sel == (std::find(ms.positions.begin(), ms.positions.end(), static_cast<int>(i)) != ms.positions.end()));
      if (!sel) {
        CHECK(ms.input[i] == batch[s][i]);
        continue;
      }
      ++selected;
      masked += ms.input[i] == kMaskId;
      kept += ms.input[i] == batch[s][i];
      CHECK(ms.input[i] != kPadId);
    }
  }
  // binomial: n = 20000, p = 0.15 → sd ≈ 50
  CHECK(std::fabs(static_cast<double>(selected) - 3000.0) < 250.0);
  CHECK(static_cast<double>(masked) / selected == doctest::Approx(0.8).epsilon(0.05));
  CHECK(static_cast<double>(kept) / selected > 0.07);  // 10% unchanged plus chance replacements
}

TEST_CASE("at_least_one forces a masked position") {
  MaskOptions opt;
  opt.p = 0.0;
  opt.at_least_one = true;
  for (int s = 0; s < 20; ++s) {
    const MaskedSentence m = mlm_mask_sentence(std::vector<int>{5, 6, 7}, opt, s, 30);
    CHECK(m.positions.size() == 1);
  }
}

TEST_CASE("perplexity oracles") {
  // uniform logits over 200 ids
  Tensor uniform({10, 200});
  std::vector<int> labels(10);
  for (int i = 0; i < 10; ++i) labels[i] = i * 7;
  CHECK(perplexity_from_logits(uniform, labels) == doctest::Approx(200.0).epsilon(0.5 / 200));
  // oracle logits
  Tensor oracle({10, 200});
  for (int i = 0; i < 10; ++i) oracle.data[i * 200 + labels[i]] = 1000.0f;
  CHECK(std::fabs(perplexity_from_logits(oracle, labels) - 1.0) <= 1e-3);
  // per-position CE {ln2, ln2, ln8}: two-way uniform twice, eight-way uniform once
  Tensor hand({3, 8});
  const float neg = -1e4f;
  for (int j = 2; j < 8; ++j) hand.data[0 * 8 + j] = hand.data[1 * 8 + j] = neg;
  const std::vector<int> hl{0, 1, 5};
  CHECK(perplexity_from_logits(hand, hl) == doctest::Approx(std::pow(2.0, 5.0 / 3.0)).epsilon(1e-5));
  CHECK(perplexity_from_logits(hand, hl) == doctest::Approx(3.1748).epsilon(1e-4));
  const std::vector<int> ignored(3, kIgnoreLabel);
  CHECK_THROWS_AS(perplexity_from_logits(hand, ignored), ShapeError);
}

TEST_CASE("corpus perplexity is order invariant and matches an independent loop") {
  const Encoder m = Encoder::init(tiny(), 3);
  std::vector<KeyedSentence> corpus;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    KeyedSentence s{i, {}};
    const int len = 3 + rng.uniform_int(5);
    for (int j = 0; j < len; ++j) s.ids.push_back(kReservedIds + rng.uniform_int(27));
    corpus.push_back(s);
  }
  const double a = perplexity(m, corpus, 0.15, 9, 16);
  std::vector<KeyedSentence> shuffled = corpus;
  rng.shuffle(shuffled);
  CHECK(perplexity(m, shuffled, 0.15, 9, 7) == doctest::Approx(a).epsilon(1e-6));

  // one sentence at a time, masks rebuilt from the per-id seed
  MaskOptions opt;
  opt.mask_only = true;
  double total = 0;
  int n = 0;
  for (const auto& s : corpus) {
    const MaskedSentence ms = mlm_mask_sentence(s.ids, opt, derive_seed(9, "mask", s.id), 30);
    if (ms.positions.empty()) continue;
    const Tensor h = m.encode(ms.input);
    Tape t;
    const BoundModel b = m.bind(t);
    const Tensor& logits = t.value(m.mlm_logits(t, b, t.constant(h), ms.positions));
    std::vector<int> lab;
    for (int p : ms.positions) lab.push_back(s.ids[p]);
    for (float ce : row_cross_entropy(logits, lab)) total += ce;
    n += static_cast<int>(lab.size());
  }
  CHECK(a == doctest::Approx(std::exp(total / n)).epsilon(1e-5));
  CHECK(a > 1.0);
}

TEST_CASE("xsr contrastive loss") {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  CHECK(xsr_value(eye, eye, 1.0f) == doctest::Approx(std::log(1 + std::exp(-1.0))).epsilon(1e-6));
  CHECK(xsr_value(eye, eye, 1.0f) == doctest::Approx(0.3133).epsilon(1e-4));
  for (int b : {2, 3, 7}) {
    Tensor same({b, 3});
    for (int i = 0; i < b; ++i) same.data[i * 3] = 1.0f;
    CHECK(xsr_value(same, same, 0.1f) == doctest::Approx(std::log(b)).epsilon(1e-6));
  }
  Rng rng(1);
  const Tensor a = unit_rows(rng, 6, 5), c = unit_rows(rng, 6, 5);
  CHECK(xsr_value(a, c, 0.1f) == doctest::Approx(xsr_value(c, a, 0.1f)).epsilon(1e-6));
  CHECK(xsr_value(a, c, 0.1f) >= 0.0);
  CHECK_THROWS_AS(xsr_value(unit_rows(rng, 1, 5), unit_rows(rng, 1, 5), 0.1f), ShapeError);
  CHECK_THROWS_AS(xsr_value(a, c, 0.0f), ConfigError);
  CHECK_THROWS_AS(xsr_value(a, unit_rows(rng, 5, 5), 0.1f), ShapeError);
}

TEST_CASE("precision at k basics") {
  RetrievalPool pool;
  pool.queries = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0});
  pool.query_ids = {10, 11};
  pool.candidates = Tensor::matrix(3, 3, {1, 0, 0, 0, 0, 1, 0, 1, 0});
  pool.candidate_ids = {10, 12, 11};
  CHECK(precision_at_k(pool, 1) == 1.0);
  // second query's true match pushed to rank 3
  pool.candidates = Tensor::matrix(4, 3, {1, 0, 0, 0, 0.9f, 0.1f, 0, 0.8f, 0.2f, 0, 0.95f, 0.05f});
  pool.candidate_ids = {10, 12, 11, 13};
  const auto ranks = true_candidate_ranks(pool);
  CHECK(ranks == std::vector<int>{1, 3});
  CHECK(precision_at_k(pool, 1) == 0.5);
  CHECK(precision_at_k(pool, 5) == 1.0);
  // ties: identical candidates, lower index wins
  pool.candidates = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 1, 0});
  pool.candidate_ids = {10, 12, 11};
  CHECK(true_candidate_ranks(pool) == std::vector<int>{1, 2});
  CHECK_THROWS_AS(precision_at_k(pool, 0), ConfigError);
  pool.candidate_ids = {10, 10, 11};
  CHECK_THROWS_AS(precision_at_k(pool, 1), ShapeError);
}

TEST_CASE("precision at k agrees with a full-sort ranker") {
  Rng rng(77);
  const int n = 100, d = 8;
  RetrievalPool pool;
  pool.queries = unit_rows(rng, n, d);
  pool.candidates = unit_rows(rng, n, d);
  for (int i = 0; i < n; ++i) {
    pool.query_ids.push_back(i);
    pool.candidate_ids.push_back((i * 37) % n);
  }
  double prev = 0;
  for (int k : {1, 5, 10, 50, 100}) {
    int hits = 0;
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<double, int>> scored;
      for (int j = 0; j < n; ++j) {
        double s = 0;
        for (int c = 0; c < d; ++c) s += static_cast<double>(pool.queries.at(i, c)) * pool.candidates.at(j, c);
        scored.push_back({-s, j});
      }
      std::sort(scored.begin(), scored.end());
      for (int r = 0; r < k; ++r) hits += pool.candidate_ids[scored[r].second] == pool.query_ids[i];
    }
    const double pk = precision_at_k(pool, k);
    CHECK(pk == doctest::Approx(static_cast<double>(hits) / n));
    CHECK(pk >= prev);
    prev = pk;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("tagging metrics") {
  using T = NerTag;
  auto t = [](std::initializer_list<T> v) {
    std::vector<int> out;
    for (T x : v) out.push_back(static_cast<int>(x));
    return out;
  };
  const std::vector<std::vector<int>> gold{t({T::b_per, T::i_per, T::o, T::b_loc}), t({T::o, T::o})};
  CHECK(tagging_metrics(gold, gold, TagMetric::ner_span_f1) == 1.0);
  CHECK(tagging_metrics(gold, gold, TagMetric::pos_accuracy) == 1.0);
  const std::vector<std::vector<int>> none{t({T::o, T::o, T::o, T::o}), t({T::o, T::o})};
  CHECK(tagging_metrics(none, gold, TagMetric::ner_span_f1) == 0.0);
  const std::vector<std::vector<int>> half{t({T::b_per, T::i_per, T::o, T::o}), t({T::o, T::o})};
  CHECK(tagging_metrics(half, gold, TagMetric::ner_span_f1) == doctest::Approx(2.0 / 3.0));
  // ill-formed I- opens a span of its own
  const std::vector<std::vector<int>> ill{t({T::i_per, T::i_per, T::o, T::i_loc}), t({T::o, T::o})};
  CHECK(tagging_metrics(ill, gold, TagMetric::ner_span_f1) == 1.0);
  CHECK(decode_spans(t({T::b_per, T::i_loc})).size() == 2);
  CHECK(tagging_metrics({{0, 1, 2}}, {{0, 1, 3}}, TagMetric::pos_accuracy) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(tagging_metrics({{0, 1}}, {{0, 1, 2}}, TagMetric::pos_accuracy), ShapeError);
  CHECK_THROWS_AS(tagging_metrics({{0}}, {{0}, {1}}, TagMetric::ner_span_f1), ShapeError);
}

TEST_CASE("predict_tags restricts to the range") {
  const Encoder m = Encoder::init(tiny(), 1);
  const std::vector<std::vector<int>> sents{{5, 6, 7}, {8, 9}};
  const auto pos = predict_tags(m, sents, 0, kPosTagCount);
  const auto ner = predict_tags(m, sents, kNerTagOffset, kTagSpaceSize, 1);
  REQUIRE(pos.size() == 2);
  CHECK(pos[0].size() == 3);
  for (const auto& s : pos)
    for (int v : s) CHECK((v >= 0 && v < kPosTagCount));
  for (const auto& s : ner)
    for (int v : s) CHECK((v >= 0 && v < kNerTagCount));
  CHECK_THROWS_AS(predict_tags(m, sents, 3, 3), ConfigError);
}
