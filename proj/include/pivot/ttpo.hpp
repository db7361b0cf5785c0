#pragma once

/**
 * Targeted transition preference optimization.
 *
 * A preference pair is (context before a pivot, chosen connective token,
 * rejected connective token). The loss is -log sigmoid(beta * delta) with
 * delta the chosen-minus-rejected difference of policy-vs-reference log
 * ratios at that single position, so only the pivot logits receive gradient.
 */

#include "pivot/decode.hpp"
#include "pivot/lexicon.hpp"
#include "pivot/toy_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pivot {

struct PreferencePair {
  std::vector<TokenId> context;
  TokenId w_c = 0;
  TokenId w_r = 0;
  std::string prompt_id;
  std::size_t pivot_pos = 0;
  std::string chosen_phrase;
  std::string rejected_phrase;
  double chosen_prior = 0.0;
  double rejected_prior = 0.0;
};

struct PromptTask {
  std::string id;
  std::vector<TokenId> prompt;
  std::string gold;
};

struct PairBuildLog {
  std::string prompt_id;
  std::string status;  // "pair", "no-pivot", "all-correct", "all-incorrect"
  std::size_t pivot_pos = 0;
  std::vector<std::string> candidates;
};

/**
 * Mines one pair per task: the pivot is the first greedy step whose emitted
 * token is a connective; candidates are that phrase plus `n_alternatives`
 * phrases sampled without replacement from the tokenizable lexicon; every
 * branch is completed greedily and checked against the gold answer. The pair
 * takes the highest-prior correct and highest-prior incorrect phrases with
 * distinct first tokens.
 */
std::vector<PreferencePair> build_preference_pairs(const LanguageModel& model, const std::vector<PromptTask>& tasks,
                                                   const ConnectiveLexicon& lexicon, std::size_t n_alternatives,
                                                   std::uint64_t seed, const DecodeOptions& options = {},
                                                   std::vector<PairBuildLog>* log = nullptr);

double ttpo_delta(const LanguageModel& policy, const LanguageModel& reference, std::span<const TokenId> context,
                  TokenId w_c, TokenId w_r);

/// -log sigmoid(beta * delta); requires beta > 0.
double ttpo_loss(double delta, double beta);

struct TtpoConfig {
  double beta = 0.1;
  int epochs = 3;
  int batch_size = 1;
  double learning_rate = 1e-6;
  std::uint64_t seed = 7;
  bool shuffle = true;

  void validate() const;
};

struct TtpoStep {
  int epoch = 0;
  std::size_t pair = 0;
  double delta = 0.0;
  double loss = 0.0;
};

struct TtpoLog {
  std::vector<TtpoStep> steps;
  std::vector<double> epoch_mean_loss;
};

/**
 * Parameter gradient of the loss for one pair. With `continuation` the
 * forward pass runs over context + continuation; the loss still reads only
 * the pivot row.
 */
Vector ttpo_gradient(const ToyTransformer& policy, double ref_logp_c, double ref_logp_r, const PreferencePair& pair,
                     double beta, std::span<const TokenId> continuation = {}, double* delta_out = nullptr);

/// Trains `policy` in place against a frozen reference.
TtpoLog ttpo_train(ToyTransformer& policy, const LanguageModel& reference, const std::vector<PreferencePair>& pairs,
                   const TtpoConfig& cfg);

struct SharpeningRow {
  double top1_before = 0.0;
  double entropy_before = 0.0;
  double top1_after = 0.0;
  double entropy_after = 0.0;
};

struct SharpeningReport {
  std::vector<SharpeningRow> rows;
  double mean_top1_delta = 0.0;
  double mean_entropy_delta = 0.0;
};

SharpeningReport sharpening_report(const LanguageModel& before, const LanguageModel& after,
                                   const std::vector<std::vector<TokenId>>& pivot_contexts);

std::string pair_to_json(const PreferencePair& p);
PreferencePair pair_from_json(const std::string& line);
void write_pairs(const std::string& path, const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> read_pairs(const std::string& path);

}  // namespace pivot
