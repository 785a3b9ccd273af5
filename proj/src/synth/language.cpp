#include <algorithm>
#include <array>
#include <set>
#include <string>

#include "gemft/synth.hpp"
#include "gemft/tensor.hpp"

namespace gemft {

namespace {

constexpr std::array<const char*, kPosTagCount> kPosNames{"DET", "ADJ", "NOUN", "VERB", "ADP", "PROPN"};
constexpr std::array<const char*, kNerTagCount> kNerNames{"O", "B-PER", "I-PER", "B-LOC", "I-LOC"};
constexpr std::array<const char*, kWordClassCount> kClassNames{"det", "adj", "noun", "verb", "adp", "name", "place"};

// Share of the base vocabulary given to each class; nouns take the remainder.
constexpr std::array<double, kWordClassCount> kClassShare{0.10, 0.15, 0.0, 0.15, 0.085, 0.135, 0.135};

constexpr int kTopicCount = 3;
constexpr int kMinBaseVocab = 50;

bool topical(WordClass c) { return c != WordClass::name && c != WordClass::place; }

std::vector<SentenceTemplate> default_templates() {
  using W = WordClass;
  const W D = W::det, A = W::adj, N = W::noun, V = W::verb, P = W::adp, NM = W::name, PL = W::place;
  return {
      {{D, N, V, D, N}},
      {{D, A, N, V}},
      {{NM, V, D, A, N}},
      {{D, N, V, P, PL}},
      {{NM, NM, V, P, D, N}},
      {{D, A, N, V, P, PL, PL}},
      {{NM, V, D, A, N, P, D, N}},
      {{D, A, N, V, NM, NM, P, PL}},
  };
}

std::string pseudo_word(Rng& rng) {
  static constexpr char kOnsets[] = "bdfgklmnprstvz";
  static constexpr char kVowels[] = "aeiou";
  const int syllables = 2 + rng.uniform_int(2);
  std::string w;
  for (int i = 0; i < syllables; ++i) {
    w += kOnsets[rng.uniform_int(sizeof(kOnsets) - 1)];
    w += kVowels[rng.uniform_int(sizeof(kVowels) - 1)];
  }
  return w;
}

}  // namespace

const char* pos_tag_name(int pos) { return kPosNames.at(pos); }
const char* ner_tag_name(int ner) { return kNerNames.at(ner); }

int pos_tag_from_name(const std::string& name) {
  for (int i = 0; i < kPosTagCount; ++i)
    if (name == kPosNames[i]) return i;
  throw FormatError("unknown POS tag '" + name + "'");
}

int ner_tag_from_name(const std::string& name) {
  for (int i = 0; i < kNerTagCount; ++i)
    if (name == kNerNames[i]) return i;
  throw FormatError("unknown NER tag '" + name + "'");
}

PosTag pos_of(WordClass c) {
  switch (c) {
    case WordClass::det: return PosTag::det;
    case WordClass::adj: return PosTag::adj;
    case WordClass::noun: return PosTag::noun;
    case WordClass::verb: return PosTag::verb;
    case WordClass::adp: return PosTag::adp;
    case WordClass::name:
    case WordClass::place: return PosTag::propn;
  }
  return PosTag::propn;
}

std::vector<int> SentenceTemplate::gold_pos() const {
  std::vector<int> out;
  for (WordClass c : slots) out.push_back(static_cast<int>(pos_of(c)));
  return out;
}

std::vector<int> SentenceTemplate::gold_ner() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const WordClass c = slots[i];
    const bool cont = i > 0 && slots[i - 1] == c;
    if (c == WordClass::name)
      out.push_back(static_cast<int>(cont ? NerTag::i_per : NerTag::b_per));
    else if (c == WordClass::place)
      out.push_back(static_cast<int>(cont ? NerTag::i_loc : NerTag::b_loc));
    else
      out.push_back(static_cast<int>(NerTag::o));
  }
  return out;
}

std::vector<int> BaseInventory::candidates(WordClass c, int topic) const {
  const auto& all = by_class.at(static_cast<int>(c));
  if (!topical(c)) return all;
  std::vector<int> out;
  for (int w : all)
    if (topics[w] == topic) out.push_back(w);
  return out.empty() ? all : out;
}

std::vector<int> ToyLanguageSpec::slot_order(const SentenceTemplate& t) const {
  std::vector<int> order(t.slots.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (!swap_adj_noun) return order;
  for (std::size_t i = 0; i + 1 < order.size(); ++i)
    if (t.slots[i] == WordClass::adj && t.slots[i + 1] == WordClass::noun) std::swap(order[i], order[i + 1]);
  return order;
}

const ToyLanguageSpec& LanguageFamily::language(const std::string& id) const {
  return languages.at(language_index(id));
}

int LanguageFamily::language_index(const std::string& id) const {
  for (std::size_t i = 0; i < languages.size(); ++i)
    if (languages[i].id == id) return static_cast<int>(i);
  throw ConfigError("unknown language '" + id + "'");
}

LanguageFamily build_language_family(std::uint64_t seed, int n_langs, int base_vocab_size) {
  if (n_langs < 2) throw ConfigError("n_langs must be at least 2");
  if (base_vocab_size < kMinBaseVocab)
    throw ConfigError("base_vocab_size must be at least " + std::to_string(kMinBaseVocab));

  LanguageFamily fam;
  fam.seed = seed;
  fam.templates = default_templates();
  BaseInventory& base = fam.base;
  base.topic_count = kTopicCount;
  base.by_class.assign(kWordClassCount, {});

  std::array<int, kWordClassCount> counts{};
  int assigned = 0;
  for (int c = 0; c < kWordClassCount; ++c) {
    counts[c] = static_cast<int>(base_vocab_size * kClassShare[c]);
    assigned += counts[c];
  }
  counts[static_cast<int>(WordClass::noun)] = base_vocab_size - assigned;

  for (int c = 0; c < kWordClassCount; ++c) {
    const auto wc = static_cast<WordClass>(c);
    for (int j = 0; j < counts[c]; ++j) {
      const int id = base.size();
      base.names.push_back(std::string(kClassNames[c]) + std::to_string(j));
      base.classes.push_back(wc);
      base.topics.push_back(topical(wc) ? j % kTopicCount : -1);
      base.by_class[c].push_back(id);
    }
  }

  for (int l = 0; l < n_langs; ++l) {
    ToyLanguageSpec lang;
    lang.id = "L" + std::to_string(l);
    if (l == 0) {
      lang.lexicon = base.names;
    } else {
      Rng rng(derive_seed(seed, "lexicon", l));
      const std::string prefix = "l" + std::to_string(l) + "-";
      std::set<std::string> used;
      while (static_cast<int>(used.size()) < base.size()) used.insert(prefix + pseudo_word(rng));
      if (used.size() != static_cast<std::size_t>(base.size())) throw Error("surface-word collision");
      lang.lexicon.assign(used.begin(), used.end());
      rng.shuffle(lang.lexicon);
      lang.swap_adj_noun = rng.bernoulli(0.5);
    }
    for (int w = 0; w < base.size(); ++w) lang.inverse.emplace(lang.lexicon[w], w);
    fam.languages.push_back(std::move(lang));
  }
  return fam;
}

Assignment sample_assignment(const LanguageFamily& family, Rng& rng) {
  Assignment a;
  a.template_id = rng.uniform_int(static_cast<int>(family.templates.size()));
  a.topic = rng.uniform_int(family.base.topic_count);
  for (WordClass c : family.templates[a.template_id].slots) {
    const std::vector<int> pool = family.base.candidates(c, a.topic);
    a.base_words.push_back(pool[rng.uniform_int(static_cast<int>(pool.size()))]);
  }
  return a;
}

TaggedSentence realize(const LanguageFamily& family, const ToyLanguageSpec& lang, const Assignment& meaning, int id) {
  const SentenceTemplate& t = family.templates.at(meaning.template_id);
  if (meaning.base_words.size() != t.slots.size()) throw ShapeError("assignment does not fill its template");
  const std::vector<int> pos = t.gold_pos(), ner = t.gold_ner();
  TaggedSentence s;
  s.id = id;
  s.lang = lang.id;
  s.meaning = meaning;
  for (int slot : lang.slot_order(t)) {
    s.tokens.push_back(lang.lexicon.at(meaning.base_words[slot]));
    s.pos.push_back(pos[slot]);
    s.ner.push_back(ner[slot]);
  }
  return s;
}

namespace {

void check_lengths(const LanguageFamily& family, int max_seq_len) {
  for (const auto& t : family.templates)
    if (static_cast<int>(t.slots.size()) > max_seq_len)
      throw ConfigError("template of length " + std::to_string(t.slots.size()) + " exceeds max_seq_len " +
                        std::to_string(max_seq_len));
}

}  // namespace

std::vector<TaggedSentence> generate_corpus(const LanguageFamily& family, const std::string& lang, int n,
                                            std::uint64_t seed, int max_seq_len) {
  check_lengths(family, max_seq_len);
  const ToyLanguageSpec& spec = family.language(lang);
  Rng rng(seed);
  std::vector<TaggedSentence> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(realize(family, spec, sample_assignment(family, rng), i));
  return out;
}

std::vector<ParallelPair> generate_parallel_pairs(const LanguageFamily& family, const std::string& src,
                                                  const std::string& tgt, int n, std::uint64_t seed,
                                                  int max_seq_len) {
  check_lengths(family, max_seq_len);
  const ToyLanguageSpec& s = family.language(src);
  const ToyLanguageSpec& t = family.language(tgt);
  if (src == tgt) throw ConfigError("parallel pairs need two distinct languages");
  Rng rng(seed);
  std::set<std::pair<int, std::vector<int>>> seen;
  std::vector<ParallelPair> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    ParallelPair p;
    p.semantic_id = i;
    p.source_lang = src;
    p.target_lang = tgt;
    // distinct meanings, so every pair can be matched back unambiguously
    do p.meaning = sample_assignment(family, rng);
    while (!seen.emplace(p.meaning.template_id, p.meaning.base_words).second);
    p.source = realize(family, s, p.meaning, i).tokens;
    p.target = realize(family, t, p.meaning, i).tokens;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<int> to_base_words(const ToyLanguageSpec& lang, const std::vector<std::string>& tokens) {
  std::vector<int> out;
  for (const auto& tok : tokens) {
    const auto it = lang.inverse.find(tok);
    if (it == lang.inverse.end()) throw FormatError("'" + tok + "' is not a word of " + lang.id);
    out.push_back(it->second);
  }
  return out;
}

}  // namespace gemft
