#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "doctest.h"
#include "gemft/gem.hpp"
#include "gemft/rng.hpp"
#include "gemft/synth.hpp"
#include "qp_oracle.hpp"
#include "reference_encoder.hpp"

using namespace gemft;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 40;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_seq_len = 8;
  c.tag_set_size = kTagSpaceSize;
  return c;
}

std::vector<std::vector<int>> random_sentences(Rng& rng, int n, int vocab) {
  std::vector<std::vector<int>> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> s(3 + rng.uniform_int(5));
    for (int& t : s) t = kReservedIds + rng.uniform_int(vocab - kReservedIds);
    out.push_back(s);
  }
  return out;
}

TagBatch random_tag_batch(Rng& rng, int n, int vocab) {
  TagBatch b;
  b.ids = random_sentences(rng, n, vocab);
  for (const auto& s : b.ids) {
    std::vector<int> l(s.size());
    for (int& x : l) x = rng.uniform_int(kPosTagCount);
    b.labels.push_back(l);
  }
  return b;
}

std::vector<float> random_vec(Rng& rng, int n, double scale = 1.0) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

}  // namespace

TEST_CASE("sample_without_replacement") {
  std::vector<int> all = sample_without_replacement(20, 20, 3);
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 20; ++i) CHECK(all[i] == i);
  CHECK(sample_without_replacement(100, 10, 5) == sample_without_replacement(100, 10, 5));
  CHECK(sample_without_replacement(100, 10, 5) != sample_without_replacement(100, 10, 6));
  for (int s = 0; s < 1000; ++s) {
    const auto v = sample_without_replacement(50, 16, s);
    CHECK(std::set<int>(v.begin(), v.end()).size() == 16);
  }
  CHECK_THROWS_AS(sample_without_replacement(5, 6, 0), ConfigError);
}

TEST_CASE("memory population") {
  Rng rng(1);
  const auto sents = random_sentences(rng, 50, 40);
  const EpisodicMemory m = populate_mlm_memory(sents, 32, 9, 40);
  CHECK(m.size() == 32);
  CHECK(m.capacity() == 32);
  for (const auto& e : m.examples()) CHECK(!e.masked.positions.empty());
  CHECK(populate_mlm_memory(sents, 32, 9, 40).hash() == m.hash());
  CHECK_THROWS_AS(populate_mlm_memory(sents, 51, 9, 40), ConfigError);
  const EpisodicMemory x = populate_xsr_memory(sents, sents, 8, 2);
  CHECK(x.kind() == MemoryKind::xsr);
  CHECK_THROWS_AS(populate_xsr_memory(sents, sents, 1, 2), ConfigError);
  CHECK_THROWS_AS(EpisodicMemory("mlm", MemoryKind::mlm, 1, m.examples()), ConfigError);
}

TEST_CASE("memory loss is the mean of per-example losses") {
  const Encoder model = Encoder::init(tiny(), 4);
  Rng rng(2);
  const auto sents = random_sentences(rng, 64, 40);
  const EpisodicMemory m = populate_mlm_memory(sents, 32, 3, 40);
  double sum = 0;
  for (const auto& e : m.examples()) sum += memory_loss(model, EpisodicMemory("mlm", MemoryKind::mlm, 1, {e}));
  CHECK(std::fabs(memory_loss(model, m) - sum / 32) <= 1e-5);
  // single example equals its own loss through the reference too
  const EpisodicMemory one("mlm", MemoryKind::mlm, 1, {m.examples()[0]});
  const auto ref = testing::RefParams::from(model.params());
  CHECK(memory_loss(model, one) == doctest::Approx(testing::ref_memory_loss(ref, model.config(), one)).epsilon(1e-5));
  CHECK(memory_loss(model, m) == doctest::Approx(testing::ref_memory_loss(ref, model.config(), m)).epsilon(1e-5));
  const EpisodicMemory empty("mlm", MemoryKind::mlm, 1, {});
  CHECK_THROWS_AS(memory_loss(model, empty), ShapeError);
}

TEST_CASE("memory gradient shape and duplication invariance") {
  Encoder model = Encoder::init(tiny(), 5);
  Rng rng(3);
  const auto sents = random_sentences(rng, 16, 40);
  const EpisodicMemory m = populate_mlm_memory(sents, 8, 1, 40);
  std::vector<MemoryExample> twice = m.examples();
  twice.insert(twice.end(), m.examples().begin(), m.examples().end());
  const EpisodicMemory d("mlm", MemoryKind::mlm, 16, twice);
  const GradientVector a = memory_gradient(model, m).gradient, b = memory_gradient(model, d).gradient;
  REQUIRE(a.size() == model.params().trainable_scalar_count());
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, static_cast<double>(std::fabs(a[i] - b[i])));
  CHECK(diff <= 1e-6 * std::max(1.0, norm(a)));
  model.freeze_bottom(1);
  CHECK(memory_gradient(model, m).gradient.size() == model.params().trainable_scalar_count());
}

TEST_CASE("memory gradients match directional finite differences") {
  const Encoder model = Encoder::init(tiny(), 6);
  Rng rng(4);
  const auto src = random_sentences(rng, 24, 40);
  const auto tgt = random_sentences(rng, 24, 40);
  const EpisodicMemory mlm = populate_mlm_memory(src, 16, 2, 40);
  const EpisodicMemory xsr = populate_xsr_memory(src, tgt, 8, 3);
  for (int dir = 0; dir < 5; ++dir) {
    CHECK(testing::directional_check(model, mlm, 100 + dir) <= 1e-3);
    CHECK(testing::directional_check(model, xsr, 200 + dir) <= 1e-3);
  }
}

TEST_CASE("detect_violations") {
  const GradientMatrix G1{{0, 1}};
  CHECK(detect_violations(std::vector<float>{1, 0}, G1).empty());
  CHECK(detect_violations(std::vector<float>{1, -1}, G1) == std::vector<int>{0});
  CHECK(detect_violations(std::vector<float>{1, -1}, G1, 2.0).empty());
  CHECK_THROWS_AS(detect_violations(std::vector<float>{1, -1, 0}, G1), ShapeError);
  CHECK_THROWS_AS(detect_violations(std::vector<float>{1, -1}, G1, -1.0), ConfigError);
  Rng rng(8);
  for (int t = 0; t < 1000; ++t) {
    const auto g = random_vec(rng, 50);
    GradientMatrix G;
    const int K = 1 + rng.uniform_int(3);
    for (int k = 0; k < K; ++k) G.push_back(random_vec(rng, 50));
    const double margin = rng.bernoulli(0.5) ? 0.0 : rng.uniform();
    std::vector<int> expect;
    for (int k = 0; k < K; ++k) {
      double s = 0;
      for (int i = 0; i < 50; ++i) s += static_cast<double>(g[i]) * G[k][i];
      if (s < -margin) expect.push_back(k);
    }
    CHECK(detect_violations(g, G, margin) == expect);
  }
}

TEST_CASE("project_single") {
  const GradientVector r = project_single(std::vector<float>{1, -1}, std::vector<float>{0, 1});
  CHECK(r == GradientVector{1, 0});
  // grid search over feasible z: nothing closer to g than r
  double best = 1e9;
  for (int a = -200; a <= 200; ++a)
    for (int b = 0; b <= 200; ++b) {
      const double z0 = a / 100.0, z1 = b / 100.0;
      best = std::min(best, (z0 - 1) * (z0 - 1) + (z1 + 1) * (z1 + 1));
    }
  CHECK(best == doctest::Approx(1.0));
  const GradientVector zero = project_single(std::vector<float>{-2, 3}, std::vector<float>{2, -3});
  for (float v : zero) CHECK(v == 0.0f);
  CHECK_THROWS_AS(project_single(std::vector<float>{1, 1}, std::vector<float>{0, 0}), NumericError);
}

TEST_CASE("dual QP hand example") {
  const std::vector<float> g{-1, -1};
  const GradientMatrix G{{1, 0}, {0, 1}};
  const ProjectionResult r = project_dual_qp(g, G);
  CHECK(r.dual[0] == doctest::Approx(1.0));
  CHECK(r.dual[1] == doctest::Approx(1.0));
  CHECK(std::fabs(r.projected[0]) < 1e-9);
  CHECK(std::fabs(r.projected[1]) < 1e-9);
  CHECK(r.violated == std::vector<int>{0, 1});
  // dense grid over the dual confirms the minimiser
  auto dual_obj = [](double v0, double v1) { return 0.5 * (v0 * v0 + v1 * v1) - v0 - v1; };
  double best = 1e9, bv0 = 0, bv1 = 0;
  for (int a = 0; a <= 300; ++a)
    for (int b = 0; b <= 300; ++b)
      if (dual_obj(a / 100.0, b / 100.0) < best) {
        best = dual_obj(a / 100.0, b / 100.0);
        bv0 = a / 100.0;
        bv1 = b / 100.0;
      }
  CHECK(bv0 == doctest::Approx(r.dual[0]));
  CHECK(bv1 == doctest::Approx(r.dual[1]));
  CHECK(r.distance == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("dual QP reduces to the closed form") {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + rng.uniform_int(30);
    auto g = random_vec(rng, n);
    const auto g1 = random_vec(rng, n);
    double s = 0;
    for (int i = 0; i < n; ++i) s += g[i] * g1[i];
    if (s >= 0)
      for (float& x : g) x = -x;
    const GradientVector single = project_single(g, g1);
    const ProjectionResult one = project_dual_qp(g, {g1});
    const ProjectionResult dup = project_dual_qp(g, {g1, g1});
    double coeff = 0, kk = 0;
    for (int i = 0; i < n; ++i) {
      coeff -= static_cast<double>(g[i]) * g1[i];
      kk += static_cast<double>(g1[i]) * g1[i];
    }
    coeff /= kk;
    for (int i = 0; i < n; ++i) {
      CHECK(std::fabs(one.projected[i] - single[i]) <= 1e-6);
      CHECK(std::fabs(dup.projected[i] - single[i]) <= 1e-6);
    }
    CHECK(dup.dual[0] + dup.dual[1] == doctest::Approx(coeff).epsilon(1e-6));
  }
}

TEST_CASE("projection feasibility and passthrough") {
  Rng rng(12);
  for (int t = 0; t < 1000; ++t) {
    const int n = 10 + rng.uniform_int(991);
    const auto g = random_vec(rng, n);
    GradientMatrix G;
    const int K = 1 + rng.uniform_int(2);
    for (int k = 0; k < K; ++k) G.push_back(random_vec(rng, n));
    const ProjectionResult r = project_dual_qp(g, G);
    const double gn = norm(g);
    for (const auto& gk : G) CHECK(normalized_inner(r.projected, gk, gn) >= -1e-6);
    for (double v : r.dual) CHECK(v >= 0.0);
    if (r.violated.empty()) CHECK(std::equal(r.projected.begin(), r.projected.end(), g.begin()));
  }
  // feasible input comes back bitwise
  const std::vector<float> g{0.3f, 0.7f, -0.1f};
  const ProjectionResult r = project_dual_qp(g, {{1, 1, 0}});
  CHECK(r.violated.empty());
  CHECK(r.projected == GradientVector(g.begin(), g.end()));
  CHECK(r.distance == 0.0);
  CHECK_THROWS_AS(project_dual_qp(g, {{0, 0, 0}}), NumericError);
  CHECK_THROWS_AS(project_dual_qp(g, {}), ShapeError);
}

TEST_CASE("projection optimality against active-set enumeration") {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + rng.uniform_int(7);
    const auto g = random_vec(rng, n);
    const GradientMatrix G{random_vec(rng, n), random_vec(rng, n)};
    const ProjectionResult r = project_dual_qp(g, G);
    const std::vector<double> z = testing::kkt_oracle(g, G);
    REQUIRE(!z.empty());
    double err = 0;
    for (int i = 0; i < n; ++i) err += (r.projected[i] - z[i]) * (r.projected[i] - z[i]);
    CHECK(std::sqrt(err) <= 1e-4);
  }
}

TEST_CASE("QP non-convergence is reported") {
  // nearly parallel constraints converge slowly; one sweep is not enough
  const std::vector<float> g{-1, -1, 0};
  const GradientMatrix G{{1, 0.01f, 0}, {1, 0.02f, 0}};
  QpOptions opt;
  opt.max_sweeps = 1;
  try {
    project_dual_qp(g, G, opt);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("1 sweeps") != std::string::npos);
  }
}

TEST_CASE("gem_step without memories is a plain step") {
  Encoder a = Encoder::init(tiny(), 7);
  Encoder b = a;
  Rng rng(5);
  const TagBatch batch = random_tag_batch(rng, 6, 40);
  Optimizer oa(OptimizerKind::sgd, 0.1f), ob(OptimizerKind::sgd, 0.1f);
  const StepDiagnostics d = gem_step(a, batch, {}, oa);
  Tape t;
  const BoundModel bb = b.bind(t);
  const Var loss = tagging_loss(t, b, bb, batch);
  t.backward(loss);
  ob.step(b.params(), flatten_gradients(t.parameter_gradients(), b.params()));
  CHECK(a.params().bitwise_equal(b.params()));
  CHECK(d.task_loss == t.value(loss).data[0]);
  CHECK(d.projection.violated.empty());
}

TEST_CASE("gem_step keeps the applied direction feasible") {
  Rng rng(6);
  const auto src = random_sentences(rng, 40, 40);
  const auto tgt = random_sentences(rng, 40, 40);
  const EpisodicMemory mlm = populate_mlm_memory(src, 16, 1, 40);
  const EpisodicMemory xsr = populate_xsr_memory(src, tgt, 8, 2);
  const std::uint64_t hm = mlm.hash(), hx = xsr.hash();
  const std::vector<const EpisodicMemory*> mems{&mlm, &xsr};
  int violations = 0;
  for (int trial = 0; trial < 12; ++trial) {
    Encoder model = Encoder::init(tiny(), 50 + trial);
    const TagBatch batch = random_tag_batch(rng, 8, 40);
    // memory gradients at the pre-step parameters
    GradientMatrix G{memory_gradient(model, mlm).gradient, memory_gradient(model, xsr).gradient};
    Optimizer opt(OptimizerKind::sgd, 0.05f);
    const StepDiagnostics d = gem_step(model, batch, mems, opt);
    CHECK(d.memory_losses.size() == 2);
    CHECK(d.projection.dual.size() == 2);
    violations += !d.projection.violated.empty();
    const double gn = norm(d.projection.projected);
    for (const auto& gk : G) CHECK(normalized_inner(d.projection.projected, gk, gn) >= -1e-6);
    const auto line = nlohmann::json::parse(to_json_line(d));
    CHECK(line["memory_losses"].size() == 2);
    CHECK(line["step"] == 1);
  }
  CHECK(violations > 0);
  CHECK(mlm.hash() == hm);
  CHECK(xsr.hash() == hx);
}
