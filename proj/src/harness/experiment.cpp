#include <fcntl.h>
#include <omp.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "gemft/harness.hpp"
#include "gemft/hash.hpp"
#include "gemft/rng.hpp"

namespace gemft {

namespace fs = std::filesystem;

std::string MetricRecord::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["scope"] = scope;
  j["value"] = value;
  j["seed"] = seed;
  j["strategy"] = strategy;
  j["task"] = task;
  return j.dump();
}

MetricRecord MetricRecord::from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.metric = j.at("metric").get<std::string>();
    r.scope = j.at("scope").get<std::string>();
    r.value = j.at("value").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.strategy = j.at("strategy").get<std::string>();
    r.task = j.at("task").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad metric record: ") + e.what());
  }
}

std::vector<MetricRecord> read_metric_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(MetricRecord::from_json(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

fs::path CellKey::dir(const fs::path& root) const {
  return root / "cells" / strategy / task_name(task) / ("seed-" + std::to_string(seed));
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void write_records(const fs::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path);
  for (const auto& r : records) out << r.to_json() << '\n';
  if (!out) throw FormatError("cannot write " + path.string());
}

// Hash of everything the snapshot depends on.
std::uint64_t snapshot_inputs_hash(const ExperimentConfig& config) {
  const std::string echo = echo_config(config);
  Fnv1a h;
  h.update(std::string_view(echo).substr(0, echo.find("[finetune]")));
  return h.digest();
}

fs::path snapshot_path(const ExperimentConfig& config) { return fs::path(config.out_dir) / "pretrained" / "model.gemt"; }

template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error(std::string("stage '") + name + "' failed: " + e.what());
  }
}

}  // namespace

Encoder obtain_snapshot(const ExperimentConfig& config, const ExperimentData& data, std::ostream* progress) {
  const ModelConfig mc = model_config(config, data);
  const fs::path path = snapshot_path(config);
  const fs::path provenance = path.parent_path() / "provenance.json";
  const std::string inputs = hex64(snapshot_inputs_hash(config));
  if (fs::exists(path) && fs::exists(provenance)) {
    std::ifstream in(provenance);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("inputs_hash", "") == inputs) {
      if (progress) *progress << "[pretrain] reusing " << path.string() << '\n' << std::flush;
      return load_checkpoint(path, mc);
    }
  }
  fs::create_directories(path.parent_path());
  Encoder model = Encoder::init(mc, derive_seed(config.pretrain.seed, "init"));
  std::ofstream log(path.parent_path() / "pretrain.log.jsonl");
  const auto t = Clock::now();
  const PretrainResult r = pretrain(model, data, config.pretrain, &log);
  if (progress)
    *progress << "[pretrain] " << r.epochs << " epochs, " << r.steps << " steps, source ppl " << r.source_perplexity
              << (r.reached_target ? "" : " (target not reached)") << ", " << since(t) << " s\n"
              << std::flush;
  CheckpointMeta meta;
  meta.seed = config.pretrain.seed;
  meta.step = r.steps;
  meta.vocab = data.vocab.words();
  save_checkpoint(path, model, meta);
  nlohmann::ordered_json j;
  j["inputs_hash"] = inputs;
  j["params_hash"] = hex64(model.params().hash());
  j["epochs"] = r.epochs;
  j["steps"] = r.steps;
  j["source_mlm_ppl"] = r.source_perplexity;
  j["reached_target"] = r.reached_target;
  std::ofstream(provenance) << j.dump(1) << '\n';
  return model;
}

std::vector<MetricRecord> run_cell(const ExperimentConfig& config, const ExperimentData& data,
                                   const ParameterStore& snapshot, const CellKey& key, const fs::path& cell_dir) {
  fs::create_directories(cell_dir);
  Encoder model = Encoder::init(model_config(config, data), 0);
  model.params() = snapshot;
  model.reinit_tag_head(derive_seed(key.seed, "tag-head"));
  const StrategyConfig sc = config.strategy(key.strategy, key.seed);
  const FinetuneData fd = data.finetune_data(key.task);
  std::ofstream log(cell_dir / "train.log.jsonl");
  const FinetuneResult r = run_finetune(model, snapshot, sc, fd, &log, [&](int, const Encoder& m) {
    nlohmann::ordered_json j;
    j["source_mlm_ppl"] = source_perplexity(m, data);
    return j.dump();
  });
  if (!log) throw FormatError("cannot write " + (cell_dir / "train.log.jsonl").string());

  const std::vector<MetricRecord> records = evaluate(model, data, &key.task, key.seed, key.strategy);
  write_records(cell_dir / "metrics.jsonl", records);

  nlohmann::ordered_json meta;
  meta["strategy"] = key.strategy;
  meta["task"] = task_name(key.task);
  meta["seed"] = key.seed;
  meta["snapshot"] = snapshot_path(config).string();
  meta["snapshot_params_hash"] = hex64(r.snapshot_hash_before);
  meta["snapshot_unchanged"] = r.snapshot_hash_before == r.snapshot_hash_after;
  meta["steps"] = r.steps;
  meta["memories"] = r.memories;
  meta["last_task_loss"] = r.last_task_loss;
  meta["params_hash"] = hex64(model.params().hash());
  std::ofstream(cell_dir / "meta.json") << meta.dump(1) << '\n';

  if (config.save_finetuned) {
    CheckpointMeta cm;
    cm.seed = key.seed;
    cm.step = r.steps;
    cm.vocab = data.vocab.words();
    save_checkpoint(cell_dir / "model.gemt", model, cm);
  }
  return records;
}

namespace {

std::vector<CellKey> grid(const ExperimentConfig& config) {
  std::vector<CellKey> cells;
  for (const auto& t : config.tasks)
    for (const auto& s : config.strategies)
      for (auto seed : config.seeds) cells.push_back({s, task_from_name(t), seed});
  return cells;
}

void run_one(const ExperimentConfig& config, const ExperimentData& data, const ParameterStore& snapshot,
             const CellKey& key, std::size_t index, std::size_t total, std::ostream* progress) {
  const fs::path dir = key.dir(config.out_dir);
  const auto t = Clock::now();
  run_cell(config, data, snapshot, key, dir);
  if (progress) {
    std::ostringstream line;
    line << "[cell " << index + 1 << "/" << total << "] " << key.strategy << " " << task_name(key.task) << " seed "
         << key.seed << " (" << since(t) << " s)\n";
    *progress << line.str() << std::flush;
  }
}

// Worker processes claim cells through exclusive lock files, so the
// heaviest cells do not pile up on one worker.
void run_parallel(const ExperimentConfig& config, const ExperimentData& data, const ParameterStore& snapshot,
                  const std::vector<CellKey>& cells, std::ostream* progress) {
  const fs::path claims = fs::path(config.out_dir) / "claims";
  fs::remove_all(claims);
  fs::create_directories(claims);
  std::cout << std::flush;
  std::cerr << std::flush;
  if (progress) *progress << std::flush;
  std::vector<pid_t> kids;
  for (int w = 0; w < config.workers; ++w) {
    const pid_t pid = fork();
    if (pid < 0) throw Error("fork failed");
    if (pid == 0) {
      omp_set_num_threads(1);
      int rc = 0;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::string claim = (claims / std::to_string(i)).string();
        const int fd = ::open(claim.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) continue;
        ::close(fd);
        try {
          run_one(config, data, snapshot, cells[i], i, cells.size(), progress);
        } catch (const std::exception& e) {
          fs::create_directories(cells[i].dir(config.out_dir));
          std::ofstream(cells[i].dir(config.out_dir) / "error.txt") << e.what() << '\n';
          rc = 1;
        }
      }
      std::cout << std::flush;
      if (progress) *progress << std::flush;
      _exit(rc);
    }
    kids.push_back(pid);
  }
  bool ok = true;
  for (pid_t k : kids) {
    int status = 0;
    waitpid(k, &status, 0);
    ok = ok && WIFEXITED(status) && WEXITSTATUS(status) == 0;
  }
  fs::remove_all(claims);
  if (!ok) {
    std::string msg = "worker failure";
    for (const auto& c : cells) {
      std::ifstream err(c.dir(config.out_dir) / "error.txt");
      std::string what;
      if (err && std::getline(err, what))
        msg += "\n  " + c.strategy + " " + task_name(c.task) + " seed " + std::to_string(c.seed) + ": " + what;
    }
    throw Error(msg);
  }
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& config, std::ostream* progress) {
  validate(config);
  const auto start = Clock::now();
  ExperimentSummary summary;
  summary.out_dir = config.out_dir;
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  std::ofstream(out / "config.ini") << echo_config(config);

  const ExperimentData data = stage("data", [&] {
    ExperimentData d = build_data(config.data);
    write_data(d, out / "data");
    return d;
  });
  const Encoder snapshot = stage("pretrain", [&] { return obtain_snapshot(config, data, progress); });
  summary.records = stage("evaluate-pretrained", [&] {
    auto r = evaluate(snapshot, data, nullptr, 0, "pretrained");
    write_records(out / "pretrained" / "metrics.jsonl", r);
    return r;
  });

  const std::vector<CellKey> cells = grid(config);
  stage("finetune", [&] {
    fs::remove_all(out / "cells");
    if (config.workers <= 1) {
      for (std::size_t i = 0; i < cells.size(); ++i) run_one(config, data, snapshot.params(), cells[i], i, cells.size(), progress);
    } else {
      run_parallel(config, data, snapshot.params(), cells, progress);
    }
    return 0;
  });

  stage("merge", [&] {
    for (const auto& c : cells) {
      const auto r = read_metric_records(c.dir(out) / "metrics.jsonl");
      summary.records.insert(summary.records.end(), r.begin(), r.end());
    }
    write_records(out / "metrics.jsonl", summary.records);
    return 0;
  });
  stage("report", [&] {
    emit_report(config, summary.records, out);
    return 0;
  });
  summary.seconds = since(start);
  if (progress) *progress << "[done] " << cells.size() << " cells in " << summary.seconds << " s\n" << std::flush;
  return summary;
}

}  // namespace gemft
