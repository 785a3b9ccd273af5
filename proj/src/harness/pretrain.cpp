#include <algorithm>

#include <json.hpp>

#include "gemft/harness.hpp"
#include "gemft/rng.hpp"

namespace gemft {

namespace {

std::vector<KeyedSentence> keyed(const ExperimentData& data, int lang) {
  std::vector<KeyedSentence> out;
  for (const auto& s : data.eval.at(lang)) out.push_back({lang * 1000000 + s.id, data.vocab.encode(s.tokens)});
  return out;
}

std::uint64_t eval_mask_seed(const ExperimentData& data) { return derive_seed(data.family.seed, "eval-mask"); }

}  // namespace

double source_perplexity(const Encoder& model, const ExperimentData& data) {
  return perplexity(model, keyed(data, 0), 0.15, eval_mask_seed(data));
}

PretrainResult pretrain(Encoder& model, const ExperimentData& data, const PretrainConfig& config, std::ostream* log) {
  std::vector<std::vector<int>> corpus;
  std::vector<int> corpus_lang;
  for (std::size_t k = 0; k < data.pretrain.size(); ++k) {
    auto part = data.ids(data.pretrain[k]);
    corpus.insert(corpus.end(), part.begin(), part.end());
    corpus_lang.insert(corpus_lang.end(), part.size(), static_cast<int>(k));
  }
  // id → (base word, language) for code switching
  const int n_langs = data.language_count();
  std::vector<int> base_of(data.vocab.size(), -1), lang_of(data.vocab.size(), -1);
  for (int k = 0; k < n_langs; ++k) {
    const auto& lex = data.family.languages[k].lexicon;
    for (std::size_t w = 0; w < lex.size(); ++w) {
      base_of[data.vocab.id(lex[w])] = static_cast<int>(w);
      lang_of[data.vocab.id(lex[w])] = k;
    }
  }
  auto switched = [&](std::vector<int> s, Rng& rng) {
    if (config.code_switch <= 0 || n_langs < 2) return s;
    for (int& t : s) {
      if (base_of[t] < 0 || !rng.bernoulli(config.code_switch)) continue;
      int other = rng.uniform_int(n_langs - 1);
      if (other >= lang_of[t]) ++other;
      t = data.vocab.id(data.family.languages[other].lexicon[base_of[t]]);
    }
    return s;
  };
  // translation pairs concatenated into one sequence, sides alternating in order
  for (const auto& pairs : data.pretrain_pairs)
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      std::vector<int> a = data.vocab.encode(pairs[i].source), b = data.vocab.encode(pairs[i].target);
      if (i % 2) std::swap(a, b);
      a.insert(a.end(), b.begin(), b.end());
      if (static_cast<int>(a.size()) > model.config().max_seq_len) continue;
      corpus.push_back(std::move(a));
    }
  std::vector<std::vector<int>> pair_src, pair_tgt;
  for (const auto& pairs : data.pretrain_pairs)
    for (const auto& p : pairs) {
      pair_src.push_back(data.vocab.encode(p.source));
      pair_tgt.push_back(data.vocab.encode(p.target));
    }
  const bool use_xsr = config.xsr_weight > 0 && pair_src.size() >= 2;
  const int xsr_batch = std::min<int>(config.xsr_batch_size, static_cast<int>(pair_src.size()));
  std::size_t pair_cursor = 0;
  model.unfreeze_all();
  Optimizer opt(OptimizerKind::adam, config.lr);
  const BatchIterator batches(static_cast<int>(corpus.size()), config.batch_size, derive_seed(config.seed, "pretrain"));
  PretrainResult r;
  while (r.epochs < config.max_epochs) {
    double total = 0.0;
    for (int b = 0; b < batches.steps_per_epoch(); ++b) {
      std::vector<std::vector<int>> sents;
      Rng cs(derive_seed(config.seed, "code-switch", opt.steps()));
      for (int i : batches.batch(r.epochs, b)) sents.push_back(i < static_cast<int>(corpus_lang.size()) ? switched(corpus[i], cs) : corpus[i]);
      MaskOptions mo;
      mo.at_least_one = true;
      const MaskedBatch mb = mlm_mask(sents, mo, derive_seed(config.seed, "pretrain-mask", opt.steps()), model.config().vocab_size);
      Tape tape;
      const BoundModel bound = model.bind(tape);
      Var loss = mlm_loss(tape, model, bound, mb);
      if (use_xsr) {
        std::vector<std::vector<int>> xs, xt;
        for (int i = 0; i < xsr_batch; ++i, ++pair_cursor) {
          xs.push_back(pair_src[pair_cursor % pair_src.size()]);
          xt.push_back(pair_tgt[pair_cursor % pair_src.size()]);
        }
        loss = ops::add(tape, loss, ops::scale(tape, xsr_pair_loss(tape, model, bound, xs, xt, 0.1f), config.xsr_weight));
      }
      tape.backward(loss);
      opt.step(model.params(), flatten_gradients(tape.parameter_gradients(), model.params()));
      total += tape.value(loss).data[0];
    }
    ++r.epochs;
    r.source_perplexity = source_perplexity(model, data);
    if (log) {
      nlohmann::ordered_json j;
      j["epoch"] = r.epochs - 1;
      j["steps"] = opt.steps();
      j["mean_train_loss"] = total / batches.steps_per_epoch();
      j["source_mlm_ppl"] = r.source_perplexity;
      *log << j.dump() << '\n' << std::flush;
    }
    if (r.source_perplexity < config.target_perplexity) {
      r.reached_target = true;
      break;
    }
  }
  r.steps = opt.steps();
  return r;
}

std::vector<MetricRecord> evaluate(const Encoder& model, const ExperimentData& data, const FinetuneTask* task,
                                   std::uint64_t seed, const std::string& strategy) {
  std::vector<MetricRecord> out;
  const std::string task_label = task ? task_name(*task) : "none";
  auto add = [&](const std::string& metric, const std::string& scope, double value) {
    out.push_back({metric, scope, value, seed, strategy, task_label});
  };
  for (int k = 0; k < data.language_count(); ++k)
    add("mlm_ppl", data.language(k), perplexity(model, keyed(data, k), 0.15, eval_mask_seed(data)));

  for (int k = 1; k < data.language_count(); ++k) {
    const auto& pairs = data.eval_pairs.at(k - 1);
    std::vector<std::vector<int>> src, tgt;
    RetrievalPool pool;
    for (const auto& p : pairs) {
      src.push_back(data.vocab.encode(p.target));
      tgt.push_back(data.vocab.encode(p.source));
      pool.query_ids.push_back(p.semantic_id);
      pool.candidate_ids.push_back(p.semantic_id);
    }
    pool.queries = embed_sentences(model, src);
    pool.candidates = embed_sentences(model, tgt);
    const std::vector<int> ranks = true_candidate_ranks(pool);
    const std::string scope = data.language(k) + "-" + data.language(0);
    for (int kk : {1, 5, 10}) add("xsr_p@" + std::to_string(kk), scope, precision_from_ranks(ranks, kk));
  }

  if (task) {
    const bool ner = *task == FinetuneTask::ner;
    const int lo = ner ? kNerTagOffset : 0, hi = ner ? kTagSpaceSize : kPosTagCount;
    for (int k = 0; k < data.language_count(); ++k) {
      const auto& corpus = data.eval.at(k);
      const auto pred = predict_tags(model, data.ids(corpus), lo, hi);
      std::vector<std::vector<int>> gold;
      for (const auto& s : corpus) gold.push_back(ner ? s.ner : s.pos);
      add(ner ? "ner_f1" : "pos_acc", data.language(k),
          tagging_metrics(pred, gold, ner ? TagMetric::ner_span_f1 : TagMetric::pos_accuracy));
    }
  }
  return out;
}

}  // namespace gemft
