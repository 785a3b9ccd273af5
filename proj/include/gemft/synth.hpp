#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "gemft/rng.hpp"

namespace gemft {

// Word classes of the base inventory. NAME and PLACE are both tagged PROPN
// and differ only in their NER class.
enum class WordClass { det, adj, noun, verb, adp, name, place };
inline constexpr int kWordClassCount = 7;

// Tag space shared by the tagging head: POS tags first, then BIO-NER tags.
enum class PosTag { det = 0, adj, noun, verb, adp, propn };
inline constexpr int kPosTagCount = 6;
enum class NerTag { o = 0, b_per, i_per, b_loc, i_loc };
inline constexpr int kNerTagCount = 5;
inline constexpr int kNerTagOffset = kPosTagCount;
inline constexpr int kTagSpaceSize = kPosTagCount + kNerTagCount;

const char* pos_tag_name(int pos);
const char* ner_tag_name(int ner);
int pos_tag_from_name(const std::string& name);
int ner_tag_from_name(const std::string& name);
PosTag pos_of(WordClass c);

struct SentenceTemplate {
  std::vector<WordClass> slots;

  std::vector<int> gold_pos() const;
  // BIO tags; adjacent NAME slots form one PER span, adjacent PLACE slots one LOC span.
  std::vector<int> gold_ner() const;
};

// Base words shared by every language of the family.
struct BaseInventory {
  std::vector<std::string> names;      // base word id → canonical name
  std::vector<WordClass> classes;      // base word id → class
  std::vector<int> topics;             // base word id → topic, -1 when untopical
  std::vector<std::vector<int>> by_class;
  int topic_count = 0;

  // words of class c belonging to topic t (all of class c when the class is untopical)
  std::vector<int> candidates(WordClass c, int topic) const;

  int size() const { return static_cast<int>(names.size()); }
};

struct ToyLanguageSpec {
  std::string id;
  std::vector<std::string> lexicon;  // base word id → surface word
  std::unordered_map<std::string, int> inverse;
  // Adjective–noun swap (ADJ NOUN → NOUN ADJ); identity when false.
  bool swap_adj_noun = false;

  // Order in which template slots are realised in this language.
  std::vector<int> slot_order(const SentenceTemplate& t) const;
};

struct LanguageFamily {
  std::uint64_t seed = 0;
  BaseInventory base;
  std::vector<SentenceTemplate> templates;
  std::vector<ToyLanguageSpec> languages;  // languages[0] is the source

  const ToyLanguageSpec& language(const std::string& id) const;
  int language_index(const std::string& id) const;
};

// What a sentence means: template, topic, and one base word per template slot.
struct Assignment {
  int template_id = 0;
  int topic = 0;
  std::vector<int> base_words;
};

struct TaggedSentence {
  int id = 0;  // stable index within its corpus
  std::string lang;
  std::vector<std::string> tokens;
  std::vector<int> pos;  // PosTag values
  std::vector<int> ner;  // NerTag values
  Assignment meaning;
};

struct ParallelPair {
  int semantic_id = 0;
  std::string source_lang, target_lang;
  std::vector<std::string> source, target;
  Assignment meaning;
};

// Language 0 has the identity lexicon; every other language gets a seeded
// bijection onto its own surface-word space and, with probability 0.5, the
// adjective–noun swap.
LanguageFamily build_language_family(std::uint64_t seed, int n_langs, int base_vocab_size);

// Surface form of a meaning in one language, with gold tags in surface order.
TaggedSentence realize(const LanguageFamily& family, const ToyLanguageSpec& lang, const Assignment& meaning, int id);

Assignment sample_assignment(const LanguageFamily& family, Rng& rng);

std::vector<TaggedSentence> generate_corpus(const LanguageFamily& family, const std::string& lang, int n,
                                            std::uint64_t seed, int max_seq_len);

std::vector<ParallelPair> generate_parallel_pairs(const LanguageFamily& family, const std::string& src,
                                                  const std::string& tgt, int n, std::uint64_t seed, int max_seq_len);

// Maps surface tokens back to base words; throws if a token is not in the lexicon.
std::vector<int> to_base_words(const ToyLanguageSpec& lang, const std::vector<std::string>& tokens);

// Shared id space: [PAD]=0, [MASK]=1, [UNK]=2, then every surface word in
// lexicographic order.
class Vocabulary {
 public:
  static Vocabulary build(const LanguageFamily& family, const std::vector<const std::vector<TaggedSentence>*>& corpora,
                          int max_size);
  static Vocabulary from_words(std::vector<std::string> words);

  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(id); }
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Line-oriented corpus files.
void write_plain_corpus(const std::filesystem::path& path, const std::vector<TaggedSentence>& corpus);
void write_tagged_corpus(const std::filesystem::path& path, const std::vector<TaggedSentence>& corpus, bool ner);
void write_parallel_pairs(const std::filesystem::path& path, const std::vector<ParallelPair>& pairs);
std::vector<std::vector<std::string>> read_plain_corpus(const std::filesystem::path& path);
// token/TAG pairs; tags returned as POS or NER ids
std::vector<std::pair<std::vector<std::string>, std::vector<int>>> read_tagged_corpus(const std::filesystem::path& path,
                                                                                      bool ner);
std::vector<ParallelPair> read_parallel_pairs(const std::filesystem::path& path);

}  // namespace gemft
