#include <fstream>
#include <set>
#include <sstream>

#include "gemft/model.hpp"
#include "gemft/synth.hpp"
#include "gemft/tensor.hpp"

namespace gemft {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot read " + path.string());
  return f;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

std::string where(const std::filesystem::path& path, int line) { return path.string() + ":" + std::to_string(line) + ": "; }

}  // namespace

Vocabulary Vocabulary::build(const LanguageFamily& family,
                             const std::vector<const std::vector<TaggedSentence>*>& corpora, int max_size) {
  std::set<std::string> words;
  for (const auto& lang : family.languages) words.insert(lang.lexicon.begin(), lang.lexicon.end());
  for (const auto* corpus : corpora)
    for (const auto& s : *corpus) words.insert(s.tokens.begin(), s.tokens.end());
  std::vector<std::string> all{"[PAD]", "[MASK]", "[UNK]"};
  all.insert(all.end(), words.begin(), words.end());
  if (static_cast<int>(all.size()) > max_size)
    throw ConfigError("vocabulary needs " + std::to_string(all.size()) + " ids but vocab_size is " +
                      std::to_string(max_size));
  return from_words(std::move(all));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.size() < 3 || words[kPadId] != "[PAD]" || words[kMaskId] != "[MASK]" || words[kUnkId] != "[UNK]")
    throw FormatError("vocabulary must start with [PAD] [MASK] [UNK]");
  Vocabulary v;
  v.words_ = std::move(words);
  for (std::size_t i = 0; i < v.words_.size(); ++i)
    if (!v.ids_.emplace(v.words_[i], static_cast<int>(i)).second)
      throw FormatError("duplicate vocabulary entry '" + v.words_[i] + "'");
  return v;
}

int Vocabulary::id(const std::string& word) const {
  const auto it = ids_.find(word);
  return it == ids_.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

void write_plain_corpus(const std::filesystem::path& path, const std::vector<TaggedSentence>& corpus) {
  auto f = open_out(path);
  for (const auto& s : corpus) f << join(s.tokens) << '\n';
}

void write_tagged_corpus(const std::filesystem::path& path, const std::vector<TaggedSentence>& corpus, bool ner) {
  auto f = open_out(path);
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) f << ' ';
      f << s.tokens[i] << '/' << (ner ? ner_tag_name(s.ner[i]) : pos_tag_name(s.pos[i]));
    }
    f << '\n';
  }
}

void write_parallel_pairs(const std::filesystem::path& path, const std::vector<ParallelPair>& pairs) {
  auto f = open_out(path);
  for (const auto& p : pairs) f << p.semantic_id << '\t' << join(p.source) << '\t' << join(p.target) << '\n';
}

std::vector<std::vector<std::string>> read_plain_corpus(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<std::vector<std::string>> out;
  int n = 0;
  for (std::string line; std::getline(f, line);) {
    ++n;
    auto toks = split_ws(line);
    if (toks.empty()) throw FormatError(where(path, n) + "empty sentence");
    out.push_back(std::move(toks));
  }
  return out;
}

std::vector<std::pair<std::vector<std::string>, std::vector<int>>> read_tagged_corpus(const std::filesystem::path& path,
                                                                                      bool ner) {
  auto f = open_in(path);
  std::vector<std::pair<std::vector<std::string>, std::vector<int>>> out;
  int n = 0;
  for (std::string line; std::getline(f, line);) {
    ++n;
    std::vector<std::string> toks;
    std::vector<int> tags;
    for (const auto& item : split_ws(line)) {
      const auto slash = item.rfind('/');
      if (slash == std::string::npos || slash == 0 || slash + 1 == item.size())
        throw FormatError(where(path, n) + "expected token/TAG, got '" + item + "'");
      toks.push_back(item.substr(0, slash));
      try {
        const std::string tag = item.substr(slash + 1);
        tags.push_back(ner ? ner_tag_from_name(tag) : pos_tag_from_name(tag));
      } catch (const FormatError& e) {
        throw FormatError(where(path, n) + e.what());
      }
    }
    if (toks.empty()) throw FormatError(where(path, n) + "empty sentence");
    out.emplace_back(std::move(toks), std::move(tags));
  }
  return out;
}

std::vector<ParallelPair> read_parallel_pairs(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<ParallelPair> out;
  int n = 0;
  for (std::string line; std::getline(f, line);) {
    ++n;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError(where(path, n) + "expected id<TAB>source<TAB>target");
    ParallelPair p;
    try {
      std::size_t used = 0;
      p.semantic_id = std::stoi(line.substr(0, t1), &used);
      if (used != t1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(where(path, n) + "bad semantic id");
    }
    p.source = split_ws(line.substr(t1 + 1, t2 - t1 - 1));
    p.target = split_ws(line.substr(t2 + 1));
    if (p.source.empty() || p.target.empty()) throw FormatError(where(path, n) + "empty side");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace gemft
