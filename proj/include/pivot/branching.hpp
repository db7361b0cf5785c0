#pragma once

/**
 * Pivot-triggered lookahead branching.
 *
 * At a step whose top-1 token is a connective and whose top-K holds at least
 * one more connective, every connective candidate is forced and followed by a
 * short greedy lookahead. Candidates are scored by z(H) - z(S), where H is the
 * mean per-step entropy and S the mean log-probability of the lookahead, both
 * z-normalized over the candidate set; the lowest score is emitted.
 */

#include "pivot/decode.hpp"
#include "pivot/lexicon.hpp"
#include "pivot/lm.hpp"

#include <string>
#include <vector>

namespace pivot {

struct BranchConfig {
  std::size_t k = 20;
  std::size_t lookahead = 20;
  double eps = 1e-8;
  /// Only "prior-then-lexical" is defined: highest prior, then smallest surface.
  std::string tie_break = "prior-then-lexical";

  void validate() const;
};

struct BranchCandidate {
  ConnectivePhrase phrase;
  std::vector<TokenId> tokens;
  double prior_prob = 0.0;
  double H = 0.0;
  double S = 0.0;
  double H_z = 0.0;
  double S_z = 0.0;
  double score = 0.0;
  std::size_t lookahead_length = 0;
  bool immediate_eos = false;
};

struct TriggerDecision {
  bool triggered = false;
  std::vector<BranchCandidate> candidates;  // connective members of the top-K, by rank
};

TriggerDecision should_branch(const VocabDistribution& dist, const Vocabulary& vocab,
                              const ConnectiveLexicon& lexicon, std::size_t k);

struct LookaheadResult {
  double H = 0.0;
  double S = 0.0;
  std::size_t length = 0;  // forward evaluations made
  bool immediate_eos = false;
};

/// Forces `candidate` after `context`, then decodes greedily for up to `L`
/// steps; an end-of-sequence token is part of the lookahead and ends it.
LookaheadResult lookahead_eval(const LanguageModel& model, std::span<const TokenId> context,
                               std::span<const TokenId> candidate, std::size_t L);

/// Fills z-scores and scores, returns the index of the selected candidate.
std::size_t select_branch(std::vector<BranchCandidate>& candidates, double eps);

struct PivotLog {
  std::size_t pivot_pos = 0;
  std::vector<BranchCandidate> candidates;
  std::size_t chosen = 0;
  std::size_t forward_steps = 0;  // lookahead forwards at this pivot
  bool fallback = false;
};

struct BranchResult {
  GenerationTrace trace;
  std::vector<PivotLog> log;
  /// trace.forward_steps plus every lookahead forward.
  std::size_t total_forward_steps = 0;
};

BranchResult branch_decode(const LanguageModel& model, std::span<const TokenId> prompt,
                           const ConnectiveLexicon& lexicon, const BranchConfig& cfg,
                           const DecodeOptions& options = {}, std::string prompt_id = {}, std::string gold = {});

struct PivotItem {
  std::vector<TokenId> context;
  std::string gold;
  std::vector<std::string> distractors;
};

/// Fraction of items on which selection over {gold} + distractors picks gold.
double match_rate_eval(const LanguageModel& model, const std::vector<PivotItem>& items,
                       const ConnectiveLexicon& lexicon, const BranchConfig& cfg);

std::string pivot_log_to_json(const PivotLog& p);

}  // namespace pivot
