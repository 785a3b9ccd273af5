#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "gemft/harness.hpp"

namespace gemft {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// shortest text that parses back to the same value
template <class T>
std::string num(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_num(const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("expected a number, got '" + s + "'");
  return v;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (const auto& x : xs) {
    if (!s.empty()) s += ", ";
    if constexpr (std::is_same_v<T, std::string>)
      s += x;
    else
      s += num(x);
  }
  return s;
}

void parse_value(bool& out, const std::string& s) {
  if (s == "true") out = true;
  else if (s == "false") out = false;
  else throw FormatError("expected true or false, got '" + s + "'");
}
void parse_value(std::string& out, const std::string& s) { out = s; }
void parse_value(OptimizerKind& out, const std::string& s) {
  if (s == "sgd") out = OptimizerKind::sgd;
  else if (s == "adam") out = OptimizerKind::adam;
  else throw FormatError("expected sgd or adam, got '" + s + "'");
}
void parse_value(std::vector<std::string>& out, const std::string& s) { out = split_list(s); }
void parse_value(std::vector<std::uint64_t>& out, const std::string& s) {
  out.clear();
  for (const auto& x : split_list(s)) out.push_back(parse_num<std::uint64_t>(x));
}
template <class T>
void parse_value(T& out, const std::string& s) {
  out = parse_num<T>(s);
}

std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(OptimizerKind v) { return v == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string format_value(const std::vector<std::string>& v) { return join(v); }
std::string format_value(const std::vector<std::uint64_t>& v) { return join(v); }
template <class T>
std::string format_value(T v) {
  return num(v);
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Access>
Field bind(std::string key, Access access) {
  return Field{std::move(key), [access](ExperimentConfig& c, const std::string& v) { parse_value(access(c), v); },
               [access](const ExperimentConfig& c) { return format_value(access(const_cast<ExperimentConfig&>(c))); }};
}

#define GEMFT_FIELD(key, expr) bind(key, [](ExperimentConfig& c) -> auto& { return expr; })

struct Section {
  std::string name;
  std::vector<Field> fields;
};

const std::vector<Section>& sections() {
  static const std::vector<Section> s = {
      {"data",
       {GEMFT_FIELD("seed", c.data.seed), GEMFT_FIELD("languages", c.data.languages),
        GEMFT_FIELD("base_vocab", c.data.base_vocab), GEMFT_FIELD("pretrain_sentences", c.data.pretrain_sentences),
        GEMFT_FIELD("finetune_sentences", c.data.finetune_sentences),
        GEMFT_FIELD("eval_sentences", c.data.eval_sentences), GEMFT_FIELD("pretrain_pairs", c.data.pretrain_pairs),
        GEMFT_FIELD("memory_pairs", c.data.memory_pairs), GEMFT_FIELD("eval_pairs", c.data.eval_pairs),
        GEMFT_FIELD("max_seq_len", c.data.max_seq_len)}},
      {"model",
       {GEMFT_FIELD("vocab_size", c.model.vocab_size), GEMFT_FIELD("hidden", c.model.hidden),
        GEMFT_FIELD("layers", c.model.layers), GEMFT_FIELD("heads", c.model.heads),
        GEMFT_FIELD("max_seq_len", c.model.max_seq_len), GEMFT_FIELD("tag_set_size", c.model.tag_set_size)}},
      {"pretrain",
       {GEMFT_FIELD("seed", c.pretrain.seed), GEMFT_FIELD("lr", c.pretrain.lr),
        GEMFT_FIELD("batch_size", c.pretrain.batch_size), GEMFT_FIELD("max_epochs", c.pretrain.max_epochs),
        GEMFT_FIELD("target_perplexity", c.pretrain.target_perplexity),
        GEMFT_FIELD("code_switch", c.pretrain.code_switch), GEMFT_FIELD("xsr_weight", c.pretrain.xsr_weight),
        GEMFT_FIELD("xsr_batch_size", c.pretrain.xsr_batch_size)}},
      {"finetune",
       {GEMFT_FIELD("optimizer", c.finetune.optimizer), GEMFT_FIELD("lr", c.finetune.lr),
        GEMFT_FIELD("clip_norm", c.finetune.clip_norm), GEMFT_FIELD("epochs", c.finetune.epochs),
        GEMFT_FIELD("batch_size", c.finetune.batch_size), GEMFT_FIELD("weight_decay", c.finetune.weight_decay),
        GEMFT_FIELD("decay_to_snapshot", c.finetune.decay_to_snapshot),
        GEMFT_FIELD("mtf_weight", c.finetune.mtf_weight), GEMFT_FIELD("gem_margin", c.finetune.gem_margin),
        GEMFT_FIELD("frozen_n", c.finetune.frozen_n), GEMFT_FIELD("memory_size", c.finetune.memory_size),
        GEMFT_FIELD("aux_batch_size", c.finetune.aux_batch_size),
        GEMFT_FIELD("xsr_temperature", c.finetune.xsr_temperature)}},
      {"experiment",
       {GEMFT_FIELD("strategies", c.strategies), GEMFT_FIELD("tasks", c.tasks), GEMFT_FIELD("seeds", c.seeds),
        GEMFT_FIELD("out_dir", c.out_dir), GEMFT_FIELD("workers", c.workers),
        GEMFT_FIELD("save_finetuned", c.save_finetuned)}},
  };
  return s;
}

#undef GEMFT_FIELD

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& s : sections())
    if (s.name == section)
      for (const auto& f : s.fields)
        if (f.key == key) return &f;
  return nullptr;
}

bool known_section(const std::string& name) {
  for (const auto& s : sections())
    if (s.name == name) return true;
  return false;
}

}  // namespace

StrategyConfig ExperimentConfig::strategy(const std::string& name, std::uint64_t seed) const {
  StrategyConfig s = StrategyConfig::preset(name);
  const StrategyConfig& f = finetune;
  s.weight_decay = f.weight_decay;
  s.decay_to_snapshot = f.decay_to_snapshot;
  s.mtf_weight = f.mtf_weight;
  s.gem_margin = f.gem_margin;
  s.frozen_n = f.frozen_n;
  s.memory_size = f.memory_size;
  s.aux_batch_size = f.aux_batch_size;
  s.xsr_temperature = f.xsr_temperature;
  s.epochs = f.epochs;
  s.batch_size = f.batch_size;
  s.lr = f.lr;
  s.clip_norm = f.clip_norm;
  s.optimizer = f.optimizer;
  s.seed = seed;
  return s;
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.model.vocab_size = 0;
  c.strategies = StrategyConfig::preset_names();
  c.tasks = {"pos", "ner"};
  for (std::uint64_t s = 1; s <= 10; ++s) c.seeds.push_back(s);
  return c;
}

void set_config_value(ExperimentConfig& config, const std::string& section, const std::string& key,
                      const std::string& value) {
  const Field* f = find_field(section, key);
  if (!f) {
    if (!known_section(section)) throw ConfigError("unknown section [" + section + "]");
    throw ConfigError("unknown key '" + key + "' in [" + section + "]");
  }
  try {
    f->set(config, value);
  } catch (const FormatError& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  ExperimentConfig c = default_experiment_config();
  std::vector<std::string> errors;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    std::string line = raw;
    if (const auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(where + "unterminated section header '" + line + "'");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) errors.push_back(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value, got '" + line + "'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) {
      errors.push_back(where + "key '" + key + "' outside any section");
      continue;
    }
    if (!known_section(section)) continue;  // already reported
    const Field* f = find_field(section, key);
    if (!f) {
      errors.push_back(where + "unknown key '" + key + "' in [" + section + "]");
      continue;
    }
    if (!seen.insert(section + "." + key).second) {
      errors.push_back(where + "duplicate key '" + key + "' in [" + section + "]");
      continue;
    }
    try {
      f->set(c, value);
    } catch (const FormatError& e) {
      errors.push_back(where + section + "." + key + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "cannot parse " + origin + ":";
    for (const auto& e : errors) msg += "\n  " + e;
    throw FormatError(msg);
  }
  validate(c);
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string echo_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& s : sections()) {
    if (!out.empty()) out += '\n';
    out += "[" + s.name + "]\n";
    for (const auto& f : s.fields) out += f.key + " = " + f.get(config) + '\n';
  }
  return out;
}

void validate(const ExperimentConfig& c) {
  std::vector<std::string> v;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) v.push_back(msg);
  };
  const DataConfig& d = c.data;
  need(d.languages >= 2, "data.languages must be at least 2");
  need(d.base_vocab >= 50, "data.base_vocab must be at least 50");
  need(d.pretrain_sentences >= 1, "data.pretrain_sentences must be positive");
  need(d.finetune_sentences >= 1, "data.finetune_sentences must be positive");
  need(d.eval_sentences >= 1, "data.eval_sentences must be positive");
  need(d.pretrain_pairs >= 0, "data.pretrain_pairs must be non-negative");
  need(d.memory_pairs >= 1, "data.memory_pairs must be positive");
  need(d.eval_pairs >= 10, "data.eval_pairs must be at least 10 (P@10)");
  need(d.max_seq_len >= 4, "data.max_seq_len must be at least 4");

  ModelConfig m = c.model;
  need(m.vocab_size >= 0, "model.vocab_size must be 0 (generated vocabulary) or positive");
  if (m.vocab_size == 0) m.vocab_size = 256;  // placeholder for the structural checks
  try {
    m.validate();
  } catch (const ConfigError& e) {
    v.push_back(std::string("model: ") + e.what());
  }
  need(c.model.max_seq_len >= d.max_seq_len, "model.max_seq_len must be at least data.max_seq_len");

  const PretrainConfig& p = c.pretrain;
  need(p.lr > 0, "pretrain.lr must be positive");
  need(p.batch_size >= 1, "pretrain.batch_size must be positive");
  need(p.max_epochs >= 1, "pretrain.max_epochs must be positive");
  need(p.target_perplexity > 1, "pretrain.target_perplexity must exceed 1");
  need(p.code_switch >= 0 && p.code_switch <= 1, "pretrain.code_switch must lie in [0, 1]");
  need(p.xsr_weight >= 0, "pretrain.xsr_weight must be non-negative");
  need(p.xsr_batch_size >= 2, "pretrain.xsr_batch_size must be at least 2");

  need(!c.strategies.empty(), "experiment.strategies must not be empty");
  std::set<std::string> names;
  for (const auto& s : c.strategies) {
    if (!names.insert(s).second) v.push_back("experiment.strategies: duplicate strategy '" + s + "'");
    try {
      const StrategyConfig sc = c.strategy(s, 0);
      sc.validate();
      const int mlm_pool = sc.mlm_scope == MlmScope::all_languages ? d.pretrain_sentences * d.languages
                                                                   : d.pretrain_sentences;
      if (sc.regime == Regime::gem && sc.aux_mlm && sc.memory_size > mlm_pool)
        v.push_back("finetune.memory_size " + std::to_string(sc.memory_size) + " exceeds the MLM pool (" +
                    std::to_string(mlm_pool) + ") for '" + s + "'");
      const int xsr_pool = d.memory_pairs * (d.languages - 1);
      if (sc.regime == Regime::gem && sc.aux_xsr && sc.memory_size > xsr_pool)
        v.push_back("finetune.memory_size " + std::to_string(sc.memory_size) + " exceeds the XSR pool (" +
                    std::to_string(xsr_pool) + ") for '" + s + "'");
      if (sc.regime == Regime::frozen && sc.frozen_n > c.model.layers)
        v.push_back("finetune.frozen_n exceeds model.layers");
    } catch (const ConfigError& e) {
      v.push_back("experiment.strategies: " + std::string(e.what()));
    }
  }
  need(!c.tasks.empty(), "experiment.tasks must not be empty");
  std::set<std::string> tasks;
  for (const auto& t : c.tasks) {
    if (t != "pos" && t != "ner") v.push_back("experiment.tasks: unknown task '" + t + "' (expected pos or ner)");
    if (!tasks.insert(t).second) v.push_back("experiment.tasks: duplicate task '" + t + "'");
  }
  need(!c.seeds.empty(), "experiment.seeds must not be empty");
  std::set<std::uint64_t> seeds;
  for (auto s : c.seeds)
    if (!seeds.insert(s).second) v.push_back("experiment.seeds: duplicate seed " + std::to_string(s));
  need(!c.out_dir.empty(), "experiment.out_dir must not be empty");
  need(c.workers >= 1, "experiment.workers must be at least 1");

  if (!v.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& e : v) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return echo_config(a) == echo_config(b); }

}  // namespace gemft
