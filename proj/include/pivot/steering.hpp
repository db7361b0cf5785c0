#pragma once

/**
 * Gradient steering: the mean of unit-normalized gradients of
 * log P(gold connective) with respect to one layer's final-position state,
 * injected additively during decoding as h + alpha * v.
 */

#include "pivot/decode.hpp"
#include "pivot/lm.hpp"

#include <string>
#include <vector>

namespace pivot {

struct SteeringSample {
  std::vector<TokenId> context;
  TokenId target = 0;
};

struct SteeringVector {
  int layer = 0;
  Vector values;
  std::size_t n_samples = 0;
  std::size_t skipped = 0;
  std::string norm_mode = "l2-unit";

  std::string to_json_text() const;
  static SteeringVector from_json_text(const std::string& text);
  void save(const std::string& path) const;
  static SteeringVector load(const std::string& path);
};

/// L2-unit normalization; returns false (and leaves `out` untouched) for a zero vector.
bool normalize_l2(const Vector& g, Vector& out);

/**
 * Averages normalized gradients over the dataset, accumulating in dataset
 * order. Zero-norm gradients are skipped and reported through `warnings`;
 * throws when no sample survives.
 */
SteeringVector extract_steering_vector(const LanguageModel& model, const std::vector<SteeringSample>& dataset,
                                       int layer, std::vector<std::string>* warnings = nullptr);

enum class SteeringTrigger { always, at_connective };

std::string_view to_string(SteeringTrigger t);
SteeringTrigger steering_trigger_from_string(std::string_view s);

struct SteeringConfig {
  double alpha = 0.5;
  int layer = 0;
  SteeringTrigger trigger = SteeringTrigger::always;
};

/**
 * Greedy decoding with the steering edit applied at triggered steps.
 * `at_connective` probes the unsteered distribution first and steers when its
 * top-1 token would complete a lexicon phrase on the emitted suffix.
 */
GenerationTrace steer_decode(const LanguageModel& model, std::span<const TokenId> prompt, const SteeringVector& sv,
                             const SteeringConfig& cfg, const ConnectiveLexicon& lexicon,
                             const DecodeOptions& options = {}, std::string prompt_id = {}, std::string gold = {});

}  // namespace pivot
