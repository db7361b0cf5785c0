#pragma once

/**
 * Single-pivot replacement experiments: force a different phrase at one
 * position of a greedy trace, regenerate greedily, and tabulate how answer
 * correctness moves.
 */

#include "pivot/decode.hpp"
#include "pivot/lexicon.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace pivot {

enum class ReplacementPolicy { random_any, same_class, cross_class, non_connective_random };

std::string_view to_string(ReplacementPolicy p);
ReplacementPolicy replacement_policy_from_string(std::string_view s);

struct PerturbationResult {
  std::string prompt_id;
  std::size_t pivot_step = 0;
  std::string original;
  std::string replacement;
  std::optional<RelationClass> original_class;
  std::optional<RelationClass> replacement_class;
  ReplacementPolicy policy = ReplacementPolicy::random_any;
  bool original_correct = false;
  bool perturbed_correct = false;
  std::optional<std::string> perturbed_answer;
};

/// Lexicon phrases the vocabulary can tokenize, in lexicon order.
std::vector<ConnectivePhrase> tokenizable_phrases(const ConnectiveLexicon& lexicon, const Vocabulary& vocab);

bool trace_correct(const GenerationTrace& trace);

/**
 * Replaces the connective event starting at `pivot_step` (or, for the
 * non-connective policy, the token at `pivot_step`) and regenerates greedily.
 * Deterministic given `seed`: the draw uses a generator derived from the seed,
 * prompt id and step.
 */
PerturbationResult perturb_at_pivot(const LanguageModel& model, const GenerationTrace& trace, std::size_t pivot_step,
                                    ReplacementPolicy policy, const ConnectiveLexicon& lexicon, std::uint64_t seed,
                                    const DecodeOptions& options = {});

/// Seeded uniform choice among the trace's connective events (first steps).
std::optional<std::size_t> choose_pivot(const GenerationTrace& trace, const ConnectiveLexicon& lexicon,
                                        std::uint64_t seed);

struct FlipMatrix {
  std::array<double, 4> counts{};  // C->C, C->I, I->I, I->C

  static FlipMatrix from_counts(double cc, double ci, double ii, double ic);
  double total() const { return counts[0] + counts[1] + counts[2] + counts[3]; }
  /// Percentages in the order C->C, C->I, I->I, I->C.
  std::array<double, 4> rates() const;
};

FlipMatrix flip_matrix(const std::vector<PerturbationResult>& results);

struct ConditionalRates {
  std::optional<double> fragility;  // percent
  std::optional<double> repair;     // percent
};

ConditionalRates conditional_rates(const FlipMatrix& m);

struct PolicyReport {
  ReplacementPolicy policy = ReplacementPolicy::random_any;
  std::size_t n = 0;
  std::size_t c_to_i = 0;
  double rate_pct = 0.0;
  std::vector<PerturbationResult> results;
};

/**
 * C->I rates over the originally correct traces for connective->random,
 * connective->same-class and non-connective->random. Non-connective
 * positions come from the top entropy decile of all steps, excluding steps
 * covered by a connective.
 */
std::vector<PolicyReport> controlled_replacement_study(const LanguageModel& model,
                                                       const std::vector<GenerationTrace>& traces,
                                                       const ConnectiveLexicon& lexicon, std::uint64_t seed,
                                                       const DecodeOptions& options = {});

struct TransitionRate {
  RelationClass source = RelationClass::Causal;
  RelationClass target = RelationClass::Causal;
  std::size_t i_to_i = 0;
  std::size_t i_to_c = 0;
  std::optional<double> repair_pct;
  bool cross_class = false;
};

/// Conditional repair per (original class, replacement class) over originally incorrect results.
std::vector<TransitionRate> relation_shift_repair(const std::vector<PerturbationResult>& results);

std::string perturbation_to_json(const PerturbationResult& r);

}  // namespace pivot
