#include <malloc.h>

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "gemft/harness.hpp"

using namespace gemft;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string strategy;
  std::string aux;
  std::string task;
  std::string out_dir;
  int workers = 0;
  std::vector<std::string> sets;
  std::string checkpoint;
};

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "INI experiment config (defaults when omitted)");
  app->add_option("--seed", o.seeds, "fine-tuning seed(s); replaces experiment.seeds");
  app->add_option("--strategy", o.strategy, "preset (gem-mlm, naive, ...) or regime (naive, frozen, mtf, gem)");
  app->add_option("--aux", o.aux, "auxiliary tasks for mtf/gem: mlm, xsr, both, mlm-all");
  app->add_option("--task", o.task, "fine-tuning task: pos or ner; replaces experiment.tasks");
  app->add_option("--out-dir", o.out_dir, "output directory; replaces experiment.out_dir");
  app->add_option("--workers", o.workers, "parallel worker processes for the cell grid");
  app->add_option("--set", o.sets, "override any key: section.key=value (repeatable)");
}

std::string strategy_name(const std::string& strategy, const std::string& aux) {
  if (strategy.find('-') != std::string::npos) {
    if (!aux.empty()) throw ConfigError("--aux cannot be combined with the preset '" + strategy + "'");
    return strategy;
  }
  if (aux.empty() || aux == "none") return strategy;
  return strategy + "-" + aux;
}

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = o.config.empty() ? default_experiment_config() : parse_config(o.config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("--set expects section.key=value, got '" + s + "'");
    set_config_value(c, s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
  }
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.strategy.empty()) c.strategies = {strategy_name(o.strategy, o.aux)};
  else if (!o.aux.empty()) throw ConfigError("--aux needs --strategy");
  if (!o.task.empty()) c.tasks = {o.task};
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  if (o.workers > 0) c.workers = o.workers;
  validate(c);
  return c;
}

void write_config(const ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  std::ofstream(fs::path(c.out_dir) / "config.ini") << echo_config(c);
}

int gen_data(const Options& o) {
  const ExperimentConfig c = load(o);
  write_config(c);
  const ExperimentData d = build_data(c.data);
  write_data(d, fs::path(c.out_dir) / "data");
  std::cout << "wrote " << (fs::path(c.out_dir) / "data").string() << " (" << d.language_count() << " languages, vocab "
            << d.vocab.size() << ")\n";
  return 0;
}

int pretrain_cmd(const Options& o) {
  const ExperimentConfig c = load(o);
  write_config(c);
  const ExperimentData d = build_data(c.data);
  const Encoder model = obtain_snapshot(c, d, &std::cout);
  const auto records = evaluate(model, d, nullptr, 0, "pretrained");
  std::ofstream out(fs::path(c.out_dir) / "pretrained" / "metrics.jsonl");
  for (const auto& r : records) {
    out << r.to_json() << '\n';
    std::cout << r.to_json() << '\n';
  }
  return 0;
}

int finetune_cmd(const Options& o) {
  const ExperimentConfig c = load(o);
  write_config(c);
  const ExperimentData d = build_data(c.data);
  const Encoder snapshot = obtain_snapshot(c, d, &std::cout);
  for (const auto& t : c.tasks)
    for (const auto& s : c.strategies)
      for (auto seed : c.seeds) {
        const CellKey key{s, task_from_name(t), seed};
        const auto records = run_cell(c, d, snapshot.params(), key, key.dir(c.out_dir));
        std::cout << "[cell] " << s << " " << t << " seed " << seed << " → " << key.dir(c.out_dir).string() << '\n';
        for (const auto& r : records) std::cout << r.to_json() << '\n';
      }
  return 0;
}

int evaluate_cmd(const Options& o) {
  const ExperimentConfig c = load(o);
  const ExperimentData d = build_data(c.data);
  const fs::path path = o.checkpoint.empty() ? fs::path(c.out_dir) / "pretrained" / "model.gemt" : fs::path(o.checkpoint);
  const Encoder model = load_checkpoint(path, model_config(c, d));
  const CheckpointMeta meta = read_checkpoint_meta(path);
  if (meta.vocab != d.vocab.words()) throw ConfigError(path.string() + " was saved with a different vocabulary");
  std::vector<MetricRecord> records;
  if (o.task.empty()) {
    records = evaluate(model, d, nullptr, meta.seed, path.stem().string());
  } else {
    const FinetuneTask task = task_from_name(o.task);
    records = evaluate(model, d, &task, meta.seed, path.stem().string());
  }
  for (const auto& r : records) std::cout << r.to_json() << '\n';
  return 0;
}

int report_cmd(const Options& o) {
  const ExperimentConfig c = load(o);
  const auto records = read_metric_records(fs::path(c.out_dir) / "metrics.jsonl");
  emit_report(c, records, c.out_dir);
  std::cout << "wrote " << (fs::path(c.out_dir) / "report.md").string() << '\n';
  return 0;
}

int run_all(const Options& o) {
  const ExperimentConfig c = load(o);
  const ExperimentSummary s = run_experiment(c, &std::cout);
  std::cout << "report: " << (s.out_dir / "report.md").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // keep freed tensor buffers in the heap instead of returning them to the OS every step
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  CLI::App app{"GEM-constrained fine-tuning workbench on a toy multilingual encoder"};
  app.require_subcommand(1);
  Options o;
  auto* gd = app.add_subcommand("gen-data", "generate the synthetic corpora");
  auto* pt = app.add_subcommand("pretrain", "pretrain (or reuse) the snapshot and evaluate it");
  auto* ft = app.add_subcommand("finetune", "fine-tune the snapshot for each (strategy, task, seed)");
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint");
  auto* rp = app.add_subcommand("report", "rebuild the report from <out-dir>/metrics.jsonl");
  auto* ra = app.add_subcommand("run-all", "data, pretraining, every cell, and the report");
  for (auto* s : {gd, pt, ft, ev, rp, ra}) add_common(s, o);
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint file (default: the pretrained snapshot)");
  CLI11_PARSE(app, argc, argv);
  try {
    if (gd->parsed()) return gen_data(o);
    if (pt->parsed()) return pretrain_cmd(o);
    if (ft->parsed()) return finetune_cmd(o);
    if (ev->parsed()) return evaluate_cmd(o);
    if (rp->parsed()) return report_cmd(o);
    if (ra->parsed()) return run_all(o);
  } catch (const std::exception& e) {
    std::cerr << "gemft: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
