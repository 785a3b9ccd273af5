#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "gemft/harness.hpp"

namespace gemft {

namespace {

const char* kAvg = "avg†";  // excluding the source language

struct Column {
  std::string task;    // pos | ner
  std::string metric;
  std::vector<std::string> scopes;  // one → plain value, several → mean over them
  std::string label;   // scope or "avg†"
  std::string name() const { return task + ":" + label + ":" + metric; }
};

struct Index {
  // (strategy, task, seed, metric, scope) → value
  std::map<std::tuple<std::string, std::string, std::uint64_t, std::string, std::string>, double> values;

  explicit Index(const std::vector<MetricRecord>& records) {
    for (const auto& r : records) values[{r.strategy, r.task, r.seed, r.metric, r.scope}] = r.value;
  }
  const double* find(const std::string& strategy, const std::string& task, std::uint64_t seed, const std::string& metric,
                     const std::string& scope) const {
    const auto it = values.find({strategy, task, seed, metric, scope});
    return it == values.end() ? nullptr : &it->second;
  }
};

std::string fmt(double v, const char* f = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> languages(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (int k = 0; k < c.data.languages; ++k) out.push_back("L" + std::to_string(k));
  return out;
}

std::vector<std::string> pairs(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (int k = 1; k < c.data.languages; ++k) out.push_back("L" + std::to_string(k) + "-L0");
  return out;
}

std::string task_metric(const std::string& task) { return task == "pos" ? "pos_acc" : "ner_f1"; }

bool is_pretrained(const std::string& row) { return row == "pretrained"; }

// Missing records for the configured grid, named one per line.
void check_complete(const ExperimentConfig& c, const Index& index) {
  std::vector<std::string> missing;
  auto want = [&](const std::string& strategy, const std::string& task, std::uint64_t seed, const std::string& metric,
                  const std::string& scope) {
    if (!index.find(strategy, task, seed, metric, scope))
      missing.push_back("strategy=" + strategy + " task=" + task + " seed=" + std::to_string(seed) +
                        " metric=" + metric + " scope=" + scope);
  };
  auto universal = [&](const std::string& strategy, const std::string& task, std::uint64_t seed) {
    for (const auto& l : languages(c)) want(strategy, task, seed, "mlm_ppl", l);
    for (const auto& p : pairs(c))
      for (const char* m : {"xsr_p@1", "xsr_p@5", "xsr_p@10"}) want(strategy, task, seed, m, p);
  };
  universal("pretrained", "none", 0);
  for (const auto& t : c.tasks)
    for (const auto& s : c.strategies)
      for (auto seed : c.seeds) {
        universal(s, t, seed);
        for (const auto& l : languages(c)) want(s, t, seed, task_metric(t), l);
      }
  if (missing.empty()) return;
  std::string msg = "report is missing " + std::to_string(missing.size()) + " metric record(s):";
  for (std::size_t i = 0; i < missing.size() && i < 40; ++i) msg += "\n  " + missing[i];
  if (missing.size() > 40) msg += "\n  ... and " + std::to_string(missing.size() - 40) + " more";
  throw FormatError(msg);
}

double value_for(const Index& index, const std::string& row, const Column& col, std::uint64_t seed) {
  const std::string task = is_pretrained(row) ? "none" : col.task;
  double sum = 0.0;
  for (const auto& scope : col.scopes) {
    const double* v = index.find(row, task, seed, col.metric, scope);
    if (!v) throw FormatError("missing metric record " + row + "/" + task + "/" + std::to_string(seed) + "/" + col.metric + "/" + scope);
    sum += *v;
  }
  return col.scopes.size() == 1 ? sum : sum / static_cast<double>(col.scopes.size());
}

ReportTable fill(const ExperimentConfig& c, const Index& index, std::string title, std::string file,
                 const std::vector<std::string>& rows, const std::vector<Column>& columns) {
  ReportTable t;
  t.title = std::move(title);
  t.file = std::move(file);
  t.rows = rows;
  for (const auto& col : columns) t.columns.push_back(col.name());
  for (const auto& row : rows) {
    const std::vector<std::uint64_t> seeds = is_pretrained(row) ? std::vector<std::uint64_t>{0} : c.seeds;
    for (const auto& col : columns) {
      // task metrics do not exist before fine-tuning
      if (is_pretrained(row) && (col.metric == "pos_acc" || col.metric == "ner_f1")) continue;
      std::vector<double> v;
      for (auto s : seeds) v.push_back(value_for(index, row, col, s));
      t.cells[{row, col.name()}] = cell_stats(seeds, v);
    }
  }
  return t;
}

Column plain(const std::string& task, const std::string& metric, const std::string& scope) {
  return {task, metric, {scope}, scope};
}

Column averaged(const std::string& task, const std::string& metric, const std::vector<std::string>& scopes,
                const std::string& label) {
  return {task, metric, scopes, label};
}

std::vector<std::string> targets(const ExperimentConfig& c) {
  auto l = languages(c);
  l.erase(l.begin());
  return l;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw FormatError("bad number '" + s + "' in report CSV");
  return v;
}

}  // namespace

CellStats cell_stats(const std::vector<std::uint64_t>& seeds, const std::vector<double>& values) {
  if (values.empty() || values.size() != seeds.size()) throw ShapeError("cell_stats: need one value per seed");
  CellStats s;
  s.values = values;
  s.seeds = seeds;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

double win_rate(const std::vector<double>& strategy, const std::vector<double>& naive, bool lower_is_better) {
  if (strategy.size() != naive.size() || strategy.empty()) throw ShapeError("win_rate: need paired per-seed values");
  double wins = 0.0;
  for (std::size_t i = 0; i < strategy.size(); ++i) {
    const double a = strategy[i], b = naive[i];
    if (a == b) wins += 0.5;
    else if (lower_is_better ? a < b : a > b) wins += 1.0;
  }
  return wins / static_cast<double>(strategy.size());
}

std::vector<ReportTable> build_report(const ExperimentConfig& c, const std::vector<MetricRecord>& records) {
  const Index index(records);
  check_complete(c, index);
  const auto langs = languages(c);
  const auto tgts = targets(c);
  const auto prs = pairs(c);

  std::vector<std::string> all_rows = {"pretrained"};
  all_rows.insert(all_rows.end(), c.strategies.begin(), c.strategies.end());

  std::vector<Column> t1, t2, t3, t4;
  for (const auto& task : c.tasks) {
    for (const auto& l : langs) t1.push_back(plain(task, "mlm_ppl", l));
    t1.push_back(averaged(task, "mlm_ppl", tgts, kAvg));
    for (const char* m : {"xsr_p@1", "xsr_p@5", "xsr_p@10"}) {
      for (const auto& p : prs) t1.push_back(plain(task, m, p));
      t1.push_back(averaged(task, m, prs, "avg"));
    }
    for (const auto& l : langs) t2.push_back(plain(task, task_metric(task), l));
    t2.push_back(averaged(task, task_metric(task), tgts, kAvg));

    t3.push_back(plain(task, "mlm_ppl", "L0"));
    t3.push_back(averaged(task, "mlm_ppl", tgts, kAvg));
    t3.push_back(averaged(task, "xsr_p@1", prs, "avg"));
    t3.push_back(averaged(task, task_metric(task), tgts, kAvg));
  }

  std::vector<ReportTable> out;
  out.push_back(fill(c, index, "Table 1: MLM perplexity and cross-lingual retrieval", "table1_mlm_xsr.csv", all_rows, t1));
  out.push_back(fill(c, index, "Table 2: zero-shot POS accuracy and NER F1", "table2_pos_ner.csv", c.strategies, t2));

  std::vector<std::string> scope_rows = {"pretrained"};
  for (const auto& s : c.strategies)
    if (s == "gem-mlm" || s == "gem-mlm-all" || s == "mtf-mlm" || s == "mtf-mlm-all") scope_rows.push_back(s);
  out.push_back(fill(c, index, "Table 3: MLM scope ablation (source only vs all languages)", "table3_mlm_scope.csv",
                     scope_rows, t3));

  // win rate against naive per seed: 1 win, 0.5 tie, 0 loss
  ReportTable w;
  w.title = "Win rate against naive";
  w.file = "table4_win_rate.csv";
  const bool has_naive = std::find(c.strategies.begin(), c.strategies.end(), "naive") != c.strategies.end();
  if (has_naive) {
    std::vector<std::pair<Column, bool>> cols;
    for (const auto& task : c.tasks) {
      cols.push_back({plain(task, "mlm_ppl", "L0"), true});
      cols.push_back({averaged(task, "xsr_p@1", prs, "avg"), false});
      cols.push_back({averaged(task, task_metric(task), tgts, kAvg), false});
    }
    for (const auto& [col, lower] : cols) w.columns.push_back(col.name());
    for (const auto& s : c.strategies) {
      if (s == "naive") continue;
      w.rows.push_back(s);
      for (const auto& [col, lower] : cols) {
        std::vector<double> outcome;
        for (auto seed : c.seeds)
          outcome.push_back(win_rate({value_for(index, s, col, seed)}, {value_for(index, "naive", col, seed)}, lower));
        w.cells[{s, col.name()}] = cell_stats(c.seeds, outcome);
      }
    }
  }
  out.push_back(std::move(w));
  return out;
}

std::string ReportTable::markdown() const {
  std::ostringstream md;
  md << "### " << title << "\n\n";
  if (rows.empty()) {
    md << "(no rows)\n";
    return md.str();
  }
  md << "| strategy |";
  for (const auto& c : columns) md << ' ' << c << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& r : rows) {
    md << "| " << r << " |";
    for (const auto& c : columns) {
      const auto it = cells.find({r, c});
      if (it == cells.end()) {
        md << " n/a |";
        continue;
      }
      const CellStats& s = it->second;
      md << ' ' << fmt(s.mean, "%.4f");
      if (s.values.size() > 1) md << " [" << fmt(s.min, "%.4f") << ", " << fmt(s.max, "%.4f") << "]";
      md << " |";
    }
    md << '\n';
  }
  return md.str();
}

std::string ReportTable::csv() const {
  std::ostringstream out;
  out << "row,column,n,mean,min,max,values\n";
  for (const auto& r : rows)
    for (const auto& c : columns) {
      const auto it = cells.find({r, c});
      if (it == cells.end()) continue;
      const CellStats& s = it->second;
      out << r << ',' << c << ',' << s.values.size() << ',' << fmt(s.mean) << ',' << fmt(s.min) << ',' << fmt(s.max)
          << ',';
      for (std::size_t i = 0; i < s.values.size(); ++i) out << (i ? "|" : "") << s.seeds[i] << ':' << fmt(s.values[i]);
      out << '\n';
    }
  return out.str();
}

std::map<std::pair<std::string, std::string>, CellStats> parse_report_csv(const std::string& text) {
  std::map<std::pair<std::string, std::string>, CellStats> cells;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "row,column,n,mean,min,max,values")
    throw FormatError("report CSV: unexpected header");
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    const auto f = split(line, ',');
    if (f.size() != 7) throw FormatError("report CSV line " + std::to_string(n) + ": expected 7 fields");
    CellStats s;
    s.mean = parse_double(f[3]);
    s.min = parse_double(f[4]);
    s.max = parse_double(f[5]);
    for (const auto& item : split(f[6], '|')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw FormatError("report CSV line " + std::to_string(n) + ": bad value '" + item + "'");
      s.seeds.push_back(std::stoull(item.substr(0, colon)));
      s.values.push_back(parse_double(item.substr(colon + 1)));
    }
    if (std::to_string(s.values.size()) != f[2]) throw FormatError("report CSV line " + std::to_string(n) + ": count mismatch");
    cells[{f[0], f[1]}] = std::move(s);
  }
  return cells;
}

void emit_report(const ExperimentConfig& c, const std::vector<MetricRecord>& records, const std::filesystem::path& dir) {
  const std::vector<ReportTable> tables = build_report(c, records);
  std::filesystem::create_directories(dir);
  std::ostringstream md;
  md << "# Results\n\n" << c.seeds.size() << " seed(s); cells are mean [min, max] over seeds. " << kAvg
     << " averages the target languages only.\n\n";
  for (const auto& t : tables) {
    md << t.markdown() << '\n';
    const std::string text = t.csv();
    {
      std::ofstream out(dir / t.file);
      out << text;
      if (!out) throw FormatError("cannot write " + (dir / t.file).string());
    }
    // re-read what was written and compare against the tables and the records
    std::ifstream back(dir / t.file);
    std::stringstream ss;
    ss << back.rdbuf();
    const auto parsed = parse_report_csv(ss.str());
    if (parsed != t.cells) throw FormatError(t.file + " does not round-trip");
  }
  const Index index(records);
  for (const auto& t : tables) {
    if (t.file == "table4_win_rate.csv") continue;
    for (const auto& [key, s] : t.cells) {
      const auto parts = split(key.second, ':');
      if (parts.size() != 3 || parts[1] == kAvg || parts[1] == "avg") continue;
      const std::string task = is_pretrained(key.first) ? "none" : parts[0];
      for (std::size_t i = 0; i < s.values.size(); ++i) {
        const double* v = index.find(key.first, task, s.seeds[i], parts[2], parts[1]);
        if (!v || *v != s.values[i])
          throw FormatError(t.file + ": cell " + key.first + "/" + key.second + " disagrees with the metric records");
      }
    }
  }
  std::ofstream out(dir / "report.md");
  out << md.str();
  if (!out) throw FormatError("cannot write " + (dir / "report.md").string());
}

}  // namespace gemft
