#pragma once

/**
 * End-to-end toy pipeline: diagnose -> perturb -> branch -> steer -> ttpo.
 *
 * Every stage writes a metrics file into the output directory; all of them
 * are deterministic functions of (model, lexicon, config).
 */

#include "pivot/branching.hpp"
#include "pivot/decode.hpp"
#include "pivot/lexicon.hpp"
#include "pivot/toy_model.hpp"
#include "pivot/ttpo.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pivot {

struct ToyPipelineConfig {
  std::uint64_t seed = 7;
  DecodeOptions decode;
  double tau = 1.0;
  std::vector<double> quantiles{0.8, 0.9, 0.95};
  std::vector<double> category_taus{0.5, 1.0, 1.5};
  BranchConfig branch;
  std::size_t suite_distractors = 3;
  double steer_alpha = 0.5;
  int steer_layer = -1;  // -1: penultimate
  double steer_train_fraction = 0.5;
  std::size_t ttpo_alternatives = 4;
  TtpoConfig ttpo;
};

struct ToyPipelineResult {
  std::vector<std::string> files;  // metric files written, in stage order
  double greedy_accuracy = 0.0;
  double branch_accuracy = 0.0;
  double steer_accuracy = 0.0;
  double ttpo_accuracy = 0.0;
};

/// Prompt token sequences for every toy-grammar task, rendered through the toy template.
std::vector<PromptTask> toy_prompt_tasks(const ToyTransformer& model);

ToyPipelineResult run_toy_pipeline(const ToyTransformer& model, const ConnectiveLexicon& lexicon,
                                   const ToyPipelineConfig& cfg, const std::string& out_dir);

}  // namespace pivot
