#pragma once

/**
 * Benchmark ingestion, prompt templates, experiment runs and efficiency
 * accounting.
 *
 * A run directory holds plain files:
 *   manifest.json      config, config hash, model id, tool version
 *   traces.jsonl       one generation trace per task
 *   metrics.json       accuracy and counters (deterministic on the toy backend)
 *   efficiency.json    forward-step totals and hyperparameters
 *   interventions.jsonl  per-pivot branching log (branch runs only)
 *   timing.json        wall-clock seconds (not deterministic)
 */

#include "pivot/branching.hpp"
#include "pivot/decode.hpp"
#include "pivot/lexicon.hpp"
#include "pivot/steering.hpp"
#include "pivot/toy_grammar.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pivot {

inline constexpr const char* kToolVersion = "pivot-decode 1.0.0";

struct Task {
  std::string id;
  std::string template_id;
  std::map<std::string, std::string> fields;
  std::string gold_answer;
};

struct RejectedRow {
  std::size_t line = 0;
  std::string reason;
};

struct IngestResult {
  std::vector<Task> tasks;
  std::vector<RejectedRow> rejects;
};

/// zebralogic, bbh, rulebert, logiqa2, prontoqa, toy-grammar.
const std::vector<std::string>& benchmark_schemas();

IngestResult ingest_benchmark_text(const std::string& text, const std::string& schema);
IngestResult ingest_benchmark(const std::string& path, const std::string& schema);

/// Template text with `[name]` placeholders (lowercase letters and underscores).
struct PromptTemplate {
  std::string id;
  std::string text;

  std::vector<std::string> placeholders() const;
  static PromptTemplate load(const std::string& path, std::string id);
};

/// Directory holding `templates/` and other bundled data; honors PIVOT_DATA_DIR.
std::string data_directory();
PromptTemplate builtin_template(const std::string& id);

/// Substitutes task fields for placeholders; empty fields are reported in `warnings`.
std::string render_prompt(const PromptTemplate& tmpl, const Task& task, std::vector<std::string>* warnings = nullptr);

struct TaskSplit {
  std::vector<Task> train;
  std::vector<Task> test;
};

/// Seeded shuffle, then the first round(train_fraction * n) tasks go to train.
TaskSplit split_tasks(const std::vector<Task>& tasks, double train_fraction, std::uint64_t seed);

// Toy grammar helpers.
std::vector<Task> toy_grammar_tasks(const ToyGrammar& grammar);
std::string tasks_to_jsonl(const std::vector<Task>& tasks);

/// Pivot contexts (<bos> prompt + completion up to the pivot) with the valid
/// connective as gold and `n_distractors` seeded noise connectives.
std::vector<PivotItem> toy_pivot_suite(const ToyGrammar& grammar, const Vocabulary& vocab, std::size_t n_distractors,
                                       std::uint64_t seed);

struct ExperimentConfig {
  std::string method = "greedy";  // greedy | steer | branch | ttpo-model
  std::string benchmark = "toy-grammar";
  std::string benchmark_path;     // empty with toy-grammar: generated tasks
  std::string template_id;        // empty: the benchmark's own template
  std::uint64_t seed = 7;
  std::size_t limit = 0;          // 0: all tasks
  DecodeOptions decode;
  BranchConfig branch;
  SteeringConfig steer;
  std::string steering_vector_path;
  std::string output_dir = "runs";
  std::string run_name;           // empty: <method>-<timestamp>

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  /// Canonical JSON (keys sorted, no output location).
  std::string to_json_text() const;
  std::string hash() const;
};

struct ExperimentSummary {
  std::string run_dir;
  std::size_t n_tasks = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;
  std::size_t forward_steps = 0;
  std::size_t rejects = 0;
  double wall_seconds = 0.0;
};

/// Runs `cfg.method` over the configured tasks with `model` (which for
/// ttpo-model is the trained policy) and writes the run directory.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, const LanguageModel& model,
                                 const ConnectiveLexicon& lexicon);

struct EfficiencyRecord {
  std::string method;
  std::string model_id;
  std::string benchmark;
  std::size_t forward_steps = 0;
  double wall_seconds = 0.0;
  double token_cost_x = 0.0;
  std::optional<double> time_x;
  std::string hyperparams;
};

/// Normalizes every run against the greedy run of the same (model, benchmark).
std::vector<EfficiencyRecord> efficiency_report(const std::vector<std::string>& run_dirs);
std::string efficiency_csv(const std::vector<EfficiencyRecord>& records);

}  // namespace pivot
