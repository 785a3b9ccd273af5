#include <fstream>

#include "gemft/harness.hpp"
#include "gemft/rng.hpp"

namespace gemft {

const char* task_name(FinetuneTask t) { return t == FinetuneTask::pos ? "pos" : "ner"; }

FinetuneTask task_from_name(const std::string& s) {
  if (s == "pos") return FinetuneTask::pos;
  if (s == "ner") return FinetuneTask::ner;
  throw ConfigError("unknown task '" + s + "' (expected pos or ner)");
}

ExperimentData build_data(const DataConfig& c) {
  ExperimentData d;
  d.family = build_language_family(c.seed, c.languages, c.base_vocab);
  const int n = d.language_count();
  for (int k = 0; k < n; ++k) {
    const std::string& lang = d.language(k);
    d.pretrain.push_back(generate_corpus(d.family, lang, c.pretrain_sentences, derive_seed(c.seed, "pretrain", k),
                                         c.max_seq_len));
    d.eval.push_back(generate_corpus(d.family, lang, c.eval_sentences, derive_seed(c.seed, "eval", k), c.max_seq_len));
  }
  d.finetune = generate_corpus(d.family, d.language(0), c.finetune_sentences, derive_seed(c.seed, "finetune"),
                               c.max_seq_len);
  for (int k = 1; k < n; ++k) {
    d.pretrain_pairs.push_back(generate_parallel_pairs(d.family, d.language(0), d.language(k), c.pretrain_pairs,
                                                       derive_seed(c.seed, "pretrain-pairs", k), c.max_seq_len));
    d.memory_pairs.push_back(generate_parallel_pairs(d.family, d.language(0), d.language(k), c.memory_pairs,
                                                     derive_seed(c.seed, "memory-pairs", k), c.max_seq_len));
    d.eval_pairs.push_back(generate_parallel_pairs(d.family, d.language(0), d.language(k), c.eval_pairs,
                                                   derive_seed(c.seed, "eval-pairs", k), c.max_seq_len));
  }
  std::vector<const std::vector<TaggedSentence>*> corpora;
  for (const auto& p : d.pretrain) corpora.push_back(&p);
  d.vocab = Vocabulary::build(d.family, corpora, 1 << 20);
  return d;
}

ModelConfig model_config(const ExperimentConfig& config, const ExperimentData& data) {
  ModelConfig m = config.model;
  if (m.vocab_size == 0) m.vocab_size = data.vocab.size();
  if (m.vocab_size < data.vocab.size())
    throw ConfigError("model.vocab_size " + std::to_string(m.vocab_size) + " is smaller than the generated vocabulary (" +
                      std::to_string(data.vocab.size()) + ")");
  m.validate();
  return m;
}

std::vector<std::vector<int>> ExperimentData::ids(const std::vector<TaggedSentence>& corpus) const {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(vocab.encode(s.tokens));
  return out;
}

FinetuneData ExperimentData::finetune_data(FinetuneTask task) const {
  FinetuneData f;
  f.vocab_size = vocab.size();
  f.train.ids = ids(finetune);
  for (const auto& s : finetune) {
    std::vector<int> labels = task == FinetuneTask::pos ? s.pos : s.ner;
    if (task == FinetuneTask::ner)
      for (int& l : labels) l += kNerTagOffset;
    f.train.labels.push_back(std::move(labels));
  }
  f.mlm_source = ids(pretrain.at(0));
  for (const auto& p : pretrain) {
    auto part = ids(p);
    f.mlm_all.insert(f.mlm_all.end(), part.begin(), part.end());
  }
  for (const auto& pairs : memory_pairs)
    for (const auto& p : pairs) {
      f.xsr_source.push_back(vocab.encode(p.source));
      f.xsr_target.push_back(vocab.encode(p.target));
    }
  return f;
}

void write_data(const ExperimentData& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int k = 0; k < d.language_count(); ++k) {
    const std::string& lang = d.language(k);
    write_plain_corpus(dir / ("pretrain." + lang + ".txt"), d.pretrain[k]);
    write_tagged_corpus(dir / ("eval." + lang + ".pos"), d.eval[k], false);
    write_tagged_corpus(dir / ("eval." + lang + ".ner"), d.eval[k], true);
  }
  write_tagged_corpus(dir / ("finetune." + d.language(0) + ".pos"), d.finetune, false);
  write_tagged_corpus(dir / ("finetune." + d.language(0) + ".ner"), d.finetune, true);
  for (int k = 1; k < d.language_count(); ++k) {
    const std::string pair = d.language(0) + "-" + d.language(k);
    write_parallel_pairs(dir / ("pretrain." + pair + ".tsv"), d.pretrain_pairs[k - 1]);
    write_parallel_pairs(dir / ("memory." + pair + ".tsv"), d.memory_pairs[k - 1]);
    write_parallel_pairs(dir / ("eval." + pair + ".tsv"), d.eval_pairs[k - 1]);
  }
  std::ofstream v(dir / "vocab.txt");
  for (const auto& w : d.vocab.words()) v << w << '\n';
  if (!v) throw FormatError("cannot write " + (dir / "vocab.txt").string());
}

}  // namespace gemft
