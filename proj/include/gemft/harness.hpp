#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "gemft/model.hpp"
#include "gemft/strategies.hpp"
#include "gemft/synth.hpp"

namespace gemft {

// ---- configuration ----

struct DataConfig {
  std::uint64_t seed = 7;
  int languages = 4;
  int base_vocab = 60;
  int pretrain_sentences = 4000;  // per language
  int finetune_sentences = 1000;  // tagged, source language
  int eval_sentences = 500;       // tagged, per language
  int pretrain_pairs = 1000;      // per target language, concatenated for translation-pair MLM
  int memory_pairs = 500;         // translation pairs per target language for XSR memories and aux batches
  int eval_pairs = 500;           // retrieval pool per language pair
  int max_seq_len = 16;
  bool operator==(const DataConfig&) const = default;
};

struct PretrainConfig {
  std::uint64_t seed = 1;
  float lr = 2e-3f;
  int batch_size = 32;
  int max_epochs = 20;
  double target_perplexity = 5.0;
  double code_switch = 0.0;  // per-token probability of rendering a word in another language
  float xsr_weight = 1.0f;    // contrastive term on the pretraining pairs, 0 disables
  int xsr_batch_size = 32;
  bool operator==(const PretrainConfig&) const = default;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;  // vocab_size 0 means "size of the generated vocabulary"
  PretrainConfig pretrain;
  StrategyConfig finetune;  // regime fields ignored; shared hyperparameters
  std::vector<std::string> strategies;
  std::vector<std::string> tasks;  // pos, ner
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "gemft-out";
  int workers = 1;
  bool save_finetuned = false;

  // Concrete strategy for a preset name with the shared hyperparameters and a seed.
  StrategyConfig strategy(const std::string& name, std::uint64_t seed) const;
};

ExperimentConfig default_experiment_config();
// Throws FormatError (with line numbers) or ConfigError (listing every violation).
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);
// Every effective value, in a form parse_config_text accepts.
std::string echo_config(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);
// Sets one key as the config file would (used for command-line overrides).
void set_config_value(ExperimentConfig& config, const std::string& section, const std::string& key,
                      const std::string& value);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// ---- data ----

enum class FinetuneTask { pos, ner };
const char* task_name(FinetuneTask t);
FinetuneTask task_from_name(const std::string& s);

struct ExperimentData {
  LanguageFamily family;
  Vocabulary vocab;
  std::vector<std::vector<TaggedSentence>> pretrain;  // per language
  std::vector<TaggedSentence> finetune;               // source language
  std::vector<std::vector<TaggedSentence>> eval;      // per language
  std::vector<std::vector<ParallelPair>> pretrain_pairs;  // source → language k, k ≥ 1
  std::vector<std::vector<ParallelPair>> memory_pairs;
  std::vector<std::vector<ParallelPair>> eval_pairs;

  const std::string& language(int k) const { return family.languages.at(k).id; }
  int language_count() const { return static_cast<int>(family.languages.size()); }

  std::vector<std::vector<int>> ids(const std::vector<TaggedSentence>& corpus) const;
  FinetuneData finetune_data(FinetuneTask task) const;
};

ExperimentData build_data(const DataConfig& config);
// The configured model with vocab_size 0 resolved to the generated vocabulary.
ModelConfig model_config(const ExperimentConfig& config, const ExperimentData& data);
void write_data(const ExperimentData& data, const std::filesystem::path& dir);

// ---- checkpoints ----

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t params_hash = 0;
  std::uint64_t seed = 0;
  long step = 0;
  std::vector<std::string> vocab;
};

// Binary "GEMT" parameter file plus a JSON sidecar (<path>.json).
void save_checkpoint(const std::filesystem::path& path, const Encoder& model, const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
// Throws FormatError on a damaged file and ConfigError when the stored config
// hash differs from `config`.
Encoder load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);
void write_parameters(std::ostream& out, const ParameterStore& store);
ParameterStore read_parameters(std::istream& in);

// ---- pretraining ----

struct PretrainResult {
  int epochs = 0;
  long steps = 0;
  double source_perplexity = 0.0;
  bool reached_target = false;
};

// Held-out source-language MLM perplexity (eval split, fixed masks).
double source_perplexity(const Encoder& model, const ExperimentData& data);

PretrainResult pretrain(Encoder& model, const ExperimentData& data, const PretrainConfig& config,
                        std::ostream* log = nullptr);

// ---- evaluation ----

struct MetricRecord {
  std::string metric;  // mlm_ppl, xsr_p@1, xsr_p@5, xsr_p@10, pos_acc, ner_f1
  std::string scope;   // language or source-target pair
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string strategy;
  std::string task;  // fine-tuning task, "none" for the snapshot

  std::string to_json() const;
  static MetricRecord from_json(const std::string& line);
  bool operator==(const MetricRecord&) const = default;
};

// MLM perplexity per language, retrieval P@{1,5,10} per pair, and (when
// `task` is set) the task metric per language.
std::vector<MetricRecord> evaluate(const Encoder& model, const ExperimentData& data, const FinetuneTask* task,
                                   std::uint64_t seed, const std::string& strategy);

// ---- orchestration ----

struct CellKey {
  std::string strategy;
  FinetuneTask task = FinetuneTask::pos;
  std::uint64_t seed = 0;
  std::filesystem::path dir(const std::filesystem::path& root) const;
};

// Fine-tunes a copy of the snapshot for one cell and returns its metrics.
std::vector<MetricRecord> run_cell(const ExperimentConfig& config, const ExperimentData& data,
                                   const ParameterStore& snapshot, const CellKey& key,
                                   const std::filesystem::path& cell_dir);

struct ExperimentSummary {
  std::filesystem::path out_dir;
  std::vector<MetricRecord> records;
  double seconds = 0.0;
};

// data → snapshot → pretrained row → every (strategy, task, seed) cell → report.
ExperimentSummary run_experiment(const ExperimentConfig& config, std::ostream* progress = nullptr);

// Loads or trains the experiment's snapshot under <out>/pretrained.
Encoder obtain_snapshot(const ExperimentConfig& config, const ExperimentData& data, std::ostream* progress);

// ---- reporting ----

struct CellStats {
  double mean = 0.0, min = 0.0, max = 0.0;
  std::vector<double> values;  // per seed, in seed order
  std::vector<std::uint64_t> seeds;
  bool operator==(const CellStats&) const = default;
};

CellStats cell_stats(const std::vector<std::uint64_t>& seeds, const std::vector<double>& values);

struct ReportTable {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::map<std::pair<std::string, std::string>, CellStats> cells;  // (row, column)
  std::string file;  // CSV file name
  std::string markdown() const;
  std::string csv() const;
};

// Cells of a CSV written by ReportTable::csv().
std::map<std::pair<std::string, std::string>, CellStats> parse_report_csv(const std::string& text);

std::vector<ReportTable> build_report(const ExperimentConfig& config, const std::vector<MetricRecord>& records);
// Fraction of seeds on which `strategy` beats naive on a metric; ties count half.
double win_rate(const std::vector<double>& strategy, const std::vector<double>& naive, bool lower_is_better);
// Writes report.md and one CSV per table, then re-parses each CSV against the records.
void emit_report(const ExperimentConfig& config, const std::vector<MetricRecord>& records,
                 const std::filesystem::path& dir);

std::vector<MetricRecord> read_metric_records(const std::filesystem::path& path);

}  // namespace gemft
