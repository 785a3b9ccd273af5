#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "doctest.h"
#include "gemft/rng.hpp"
#include "gemft/strategies.hpp"
#include "gemft/synth.hpp"

using namespace gemft;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 30;
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
    std::vector<int> s(3 + rng.uniform_int(4));
    for (int& t : s) t = kReservedIds + rng.uniform_int(vocab - kReservedIds);
    out.push_back(s);
  }
  return out;
}

// Tag is a function of the token id, so the batch is separable.
TagBatch separable_batch(Rng& rng, int n, int vocab) {
  TagBatch b;
  b.ids = random_sentences(rng, n, vocab);
  for (const auto& s : b.ids) {
    std::vector<int> l;
    for (int t : s) l.push_back(t % kPosTagCount);
    b.labels.push_back(l);
  }
  return b;
}

FinetuneData toy_data(std::uint64_t seed) {
  Rng rng(seed);
  FinetuneData d;
  d.vocab_size = tiny().vocab_size;
  d.train = separable_batch(rng, 20, d.vocab_size);
  d.mlm_source = random_sentences(rng, 24, d.vocab_size);
  d.mlm_all = random_sentences(rng, 40, d.vocab_size);
  d.xsr_source = random_sentences(rng, 24, d.vocab_size);
  d.xsr_target = random_sentences(rng, 24, d.vocab_size);
  return d;
}

StrategyConfig small(const std::string& preset) {
  StrategyConfig c = StrategyConfig::preset(preset);
  c.epochs = 2;
  c.batch_size = 8;
  c.memory_size = 6;
  c.aux_batch_size = 4;
  c.seed = 11;
  return c;
}

std::vector<float> task_gradient(const Encoder& m, const TagBatch& batch) {
  Tape tape;
  const BoundModel b = m.bind(tape);
  const Var l = tagging_loss(tape, m, b, batch);
  tape.backward(l);
  return flatten_gradients(tape.parameter_gradients(), m.params());
}

std::vector<std::string> batch_prints(const std::string& log) {
  std::vector<std::string> out;
  std::istringstream in(log);
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("batch")) out.push_back(j["batch"]);
  }
  return out;
}

}  // namespace

TEST_CASE("presets parse into regime and auxiliary tasks") {
  for (const auto& name : StrategyConfig::preset_names()) {
    const StrategyConfig c = StrategyConfig::preset(name);
    CHECK(c.name == name);
    CHECK(c.has_aux() == (c.regime == Regime::mtf || c.regime == Regime::gem));
  }
  const auto both = StrategyConfig::preset("gem-both");
  CHECK(both.aux_mlm);
  CHECK(both.aux_xsr);
  CHECK(StrategyConfig::preset("mtf-mlm-all").mlm_scope == MlmScope::all_languages);
  CHECK(StrategyConfig::preset("gem-mlm").mlm_scope == MlmScope::source_only);
  CHECK_THROWS_AS(StrategyConfig::preset("gem-xsr-all"), ConfigError);
  CHECK_THROWS_AS(StrategyConfig::preset("sgd"), ConfigError);
  CHECK_THROWS_AS(StrategyConfig::preset("naive-mlm"), ConfigError);
}

TEST_CASE("gem without auxiliary tasks is rejected at validation") {
  StrategyConfig c;
  c.name = "bare-gem";
  c.regime = Regime::gem;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("gem needs at least one auxiliary task") != std::string::npos);
  }
}

TEST_CASE("validation lists every violation") {
  StrategyConfig c;
  c.name = "bad";
  c.regime = Regime::naive;
  c.aux_mlm = true;
  c.lr = 0;
  c.epochs = 0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("takes no auxiliary") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("epochs") != std::string::npos);
  }
}

TEST_CASE("naive step with zero decay is a pure task-gradient step") {
  Rng rng(1);
  Encoder m = Encoder::init(tiny(), 3);
  const TagBatch batch = separable_batch(rng, 4, tiny().vocab_size);
  const auto g = task_gradient(m, batch);
  ParameterStore expected = m.params();
  Optimizer ref(OptimizerKind::sgd, 0.1f);
  ref.step(expected, g);
  Optimizer opt(OptimizerKind::sgd, 0.1f);
  naive_step(m, batch, opt, WeightDecay{0.0f, nullptr});
  CHECK(m.params().bitwise_equal(expected));
}

TEST_CASE("decay alone shrinks parameters by 1 - lr*mu") {
  Encoder m = Encoder::init(tiny(), 4);
  const ParameterStore before = m.params();
  const float lr = 0.1f, mu = 0.5f;
  Optimizer opt(OptimizerKind::sgd, lr);
  const std::vector<float> zero(m.params().trainable_scalar_count(), 0.0f);
  opt.step(m.params(), zero, WeightDecay{mu, nullptr});
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t k = 0; k < before.at(i).data.size(); ++k)
      REQUIRE(m.params().at(i).data[k] == doctest::Approx(before.at(i).data[k] * (1 - lr * mu)).epsilon(1e-6));
}

TEST_CASE("decay toward the snapshot leaves the snapshot fixed") {
  Encoder m = Encoder::init(tiny(), 4);
  const ParameterStore anchor = m.params();
  Optimizer opt(OptimizerKind::sgd, 0.1f);
  const std::vector<float> zero(m.params().trainable_scalar_count(), 0.0f);
  opt.step(m.params(), zero, WeightDecay{0.5f, &anchor});
  CHECK(m.params().bitwise_equal(anchor));
}

TEST_CASE("naive steps overfit one separable batch") {
  Rng rng(5);
  Encoder m = Encoder::init(tiny(), 6);
  const TagBatch batch = separable_batch(rng, 8, tiny().vocab_size);
  Optimizer opt(OptimizerKind::adam, 0.01f);
  double first = 0, last = 0;
  for (int s = 0; s < 50; ++s) {
    last = naive_step(m, batch, opt);
    if (s == 0) first = last;
  }
  CHECK(last < first);
  CHECK(last < 0.1);
}

TEST_CASE("mtf with zero weight has exactly the naive gradient") {
  Rng rng(7);
  Encoder m = Encoder::init(tiny(), 8);
  const TagBatch batch = separable_batch(rng, 4, tiny().vocab_size);
  const auto sents = random_sentences(rng, 4, tiny().vocab_size);
  const MaskedBatch masked = mlm_mask(sents, MaskOptions{0.5, false, true}, 9, tiny().vocab_size);
  const auto xs = random_sentences(rng, 4, tiny().vocab_size), xt = random_sentences(rng, 4, tiny().vocab_size);
  AuxBatches aux{&masked, &xs, &xt};

  Tape tape;
  const BoundModel b = m.bind(tape);
  const Var l = mtf_objective(tape, m, b, batch, aux, 0.0f, nullptr);
  tape.backward(l);
  const auto g = flatten_gradients(tape.parameter_gradients(), m.params());
  const auto naive = task_gradient(m, batch);
  REQUIRE(g.size() == naive.size());
  CHECK(std::memcmp(g.data(), naive.data(), g.size() * sizeof(float)) == 0);
}

TEST_CASE("mtf combined loss equals the independently computed parts") {
  Rng rng(10);
  Encoder m = Encoder::init(tiny(), 11);
  const TagBatch batch = separable_batch(rng, 4, tiny().vocab_size);
  const auto sents = random_sentences(rng, 5, tiny().vocab_size);
  const MaskedBatch masked = mlm_mask(sents, MaskOptions{0.5, false, true}, 12, tiny().vocab_size);
  const auto xs = random_sentences(rng, 4, tiny().vocab_size), xt = random_sentences(rng, 4, tiny().vocab_size);

  auto separate = [&](auto&& f) {
    Tape tape;
    const BoundModel b = m.bind(tape);
    return static_cast<double>(tape.value(f(tape, b)).data[0]);
  };
  const double task = separate([&](Tape& t, const BoundModel& b) { return tagging_loss(t, m, b, batch); });
  const double mlm = separate([&](Tape& t, const BoundModel& b) { return mlm_loss(t, m, b, masked); });
  const double xsr = separate([&](Tape& t, const BoundModel& b) { return xsr_pair_loss(t, m, b, xs, xt, 0.1f); });

  const float lambda = 0.7f;
  LossBreakdown parts;
  {
    Tape tape;
    const BoundModel b = m.bind(tape);
    mtf_objective(tape, m, b, batch, AuxBatches{&masked, &xs, &xt}, lambda, &parts);
  }
  CHECK(parts.task == doctest::Approx(task).epsilon(1e-7));
  CHECK(parts.mlm == doctest::Approx(mlm).epsilon(1e-7));
  CHECK(parts.xsr == doctest::Approx(xsr).epsilon(1e-7));
  CHECK(std::fabs(parts.total - (task + lambda * (mlm + xsr))) <= 1e-5);

  // splitting λ=1 into two half-weighted evaluations gives the same total
  LossBreakdown full, half;
  {
    Tape tape;
    const BoundModel b = m.bind(tape);
    mtf_objective(tape, m, b, batch, AuxBatches{&masked, &xs, &xt}, 1.0f, &full);
  }
  {
    Tape tape;
    const BoundModel b = m.bind(tape);
    mtf_objective(tape, m, b, batch, AuxBatches{&masked, &xs, &xt}, 0.5f, &half);
  }
  const double halves = half.task + 0.5 * (half.mlm + half.xsr) + 0.5 * (half.mlm + half.xsr);
  CHECK(std::fabs(full.total - halves) <= 1e-6);
}

TEST_CASE("mtf step rejects a missing auxiliary batch") {
  Rng rng(13);
  Encoder m = Encoder::init(tiny(), 14);
  const TagBatch batch = separable_batch(rng, 4, tiny().vocab_size);
  Optimizer opt(OptimizerKind::sgd, 0.1f);
  CHECK_THROWS_AS(mtf_step(m, batch, AuxBatches{}, true, false, opt, 1.0f), ShapeError);
  CHECK_THROWS_AS(mtf_step(m, batch, AuxBatches{}, false, true, opt, 1.0f), ShapeError);
}

TEST_CASE("batch iterator covers each epoch once and is seed-determined") {
  const BatchIterator it(23, 5, 99), again(23, 5, 99), other(23, 5, 100);
  CHECK(it.steps_per_epoch() == 5);
  for (int e = 0; e < 3; ++e) {
    std::vector<int> seen;
    for (int b = 0; b < it.steps_per_epoch(); ++b) {
      const auto idx = it.batch(e, b);
      CHECK(idx == again.batch(e, b));
      seen.insert(seen.end(), idx.begin(), idx.end());
    }
    std::sort(seen.begin(), seen.end());
    for (int i = 0; i < 23; ++i) CHECK(seen[i] == i);
  }
  CHECK(it.batch(0, 0) != other.batch(0, 0));
  CHECK(it.batch(0, 0) != it.batch(1, 0));
}

TEST_CASE("gem with both auxiliary tasks registers two memories") {
  const FinetuneData data = toy_data(20);
  Encoder m = Encoder::init(tiny(), 21);
  const ParameterStore snapshot = m.params();
  std::ostringstream log;
  const FinetuneResult r = run_finetune(m, snapshot, small("gem-both"), data, &log);
  CHECK(r.memories == 2);
  CHECK(r.steps == 2 * 3);
  CHECK(r.snapshot_hash_before == r.snapshot_hash_after);
  CHECK(r.snapshot_hash_after == snapshot.hash());
  std::istringstream in(log.str());
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  REQUIRE(j["memory_losses"].size() == 2);
  CHECK(j["memory_losses"].contains("mlm"));
  CHECK(j["memory_losses"].contains("xsr"));
  CHECK(run_finetune(m, snapshot, small("gem-xsr"), data).memories == 1);
}

TEST_CASE("frozen regime keeps embeddings and bottom layer bitwise") {
  const FinetuneData data = toy_data(30);
  Encoder m = Encoder::init(tiny(), 31);
  const ParameterStore snapshot = m.params();
  run_finetune(m, snapshot, small("frozen"), data);
  CHECK(m.frozen_mask().empty());
  int kept = 0, moved = 0;
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    const std::string& name = m.params().name_at(i);
    const bool bottom = name.starts_with("tok_emb") || name.starts_with("pos_emb") || name.starts_with("emb_ln") ||
                        name.starts_with("layer0.");
    const bool same = m.params().at(i).data == snapshot.at(i).data;
    if (bottom) {
      CHECK_MESSAGE(same, name);
      ++kept;
    } else if (!same) {
      ++moved;
    }
  }
  CHECK(kept > 0);
  CHECK(moved > 0);
}

TEST_CASE("naive run reproduces itself bitwise") {
  const FinetuneData data = toy_data(40);
  const Encoder init = Encoder::init(tiny(), 41);
  const ParameterStore snapshot = init.params();
  Encoder a = init, b = init;
  std::ostringstream la, lb;
  run_finetune(a, snapshot, small("naive"), data, &la);
  run_finetune(b, snapshot, small("naive"), data, &lb);
  CHECK(a.params().bitwise_equal(b.params()));
  CHECK(la.str() == lb.str());
}

TEST_CASE("every regime consumes the same batches and leaves the snapshot untouched") {
  const FinetuneData data = toy_data(50);
  const Encoder init = Encoder::init(tiny(), 51);
  const ParameterStore snapshot = init.params();
  std::vector<std::string> reference;
  for (const char* name : {"naive", "frozen", "mtf-both", "gem-mlm", "gem-mlm-all", "mtf-xsr"}) {
    Encoder m = init;
    std::ostringstream log;
    const FinetuneResult r = run_finetune(m, snapshot, small(name), data, &log);
    CHECK(r.snapshot_hash_before == r.snapshot_hash_after);
    const auto prints = batch_prints(log.str());
    CHECK(prints.size() == 6);
    if (reference.empty())
      reference = prints;
    else
      CHECK_MESSAGE(prints == reference, name);
  }
  CHECK(snapshot.bitwise_equal(init.params()));
}

TEST_CASE("per-epoch hook output lands in the log") {
  const FinetuneData data = toy_data(60);
  Encoder m = Encoder::init(tiny(), 61);
  const ParameterStore snapshot = m.params();
  std::ostringstream log;
  int calls = 0;
  run_finetune(m, snapshot, small("naive"), data, &log, [&](int epoch, const Encoder&) {
    ++calls;
    return "{\"probe\":" + std::to_string(epoch) + "}";
  });
  CHECK(calls == 2);
  int epochs = 0;
  std::istringstream in(log.str());
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("epoch")) {
      CHECK(j["metrics"]["probe"] == j["epoch"]);
      ++epochs;
    }
  }
  CHECK(epochs == 2);
}

TEST_CASE("run_finetune rejects memories larger than their pool") {
  FinetuneData data = toy_data(70);
  Encoder m = Encoder::init(tiny(), 71);
  StrategyConfig c = small("gem-mlm");
  c.memory_size = 100;
  CHECK_THROWS_AS(run_finetune(m, m.params(), c, data), ConfigError);
}
