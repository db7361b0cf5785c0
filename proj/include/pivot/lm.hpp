#pragma once

/**
 * Backend-neutral language-model interface.
 *
 * Hidden-state layers are numbered over the residual stream: layer 0 is the
 * embedding output, layer i (1 <= i <= depth) is the output of block i-1.
 * The "penultimate" layer is depth-1. Activation edits act on the state of the
 * final context position at a given layer.
 */

#include "pivot/numeric.hpp"
#include "pivot/vocab.hpp"

#include <atomic>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <span>
#include <utility>
#include <vector>

namespace pivot {

/// Probability vector over the vocabulary with its full-distribution entropy (nats).
struct VocabDistribution {
  Vector log_probs;
  Vector probs;
  double entropy = 0.0;

  static VocabDistribution from_logits(const Vector& logits);
  /// Validates nonnegativity, |sum - 1| <= 1e-6 and entropy bounds; throws
  /// ValidationError naming the violated invariant. When `entropy` is given it
  /// is kept (server-computed) after a consistency check.
  static VocabDistribution from_probs(Vector probs, std::optional<double> entropy = std::nullopt);

  std::size_t size() const { return static_cast<std::size_t>(probs.size()); }
  TokenId argmax() const;
  double prob(TokenId t) const { return probs(t); }
  double log_prob(TokenId t) const { return log_probs(t); }
  /// Candidates by descending probability, ties by ascending id.
  std::vector<std::pair<TokenId, double>> top_k(std::size_t k) const;
};

struct HiddenState {
  int layer = 0;
  Vector vector;
};

/// Edit of the final-position residual state at one layer.
struct ResidualEdit {
  int layer = 0;
  std::function<Vector(const Vector&)> map;
  /// Present when `map` is h -> h + *additive; such edits have identity
  /// Jacobian and can be shipped over the wire.
  std::optional<Vector> additive;
};

ResidualEdit additive_edit(int layer, Vector delta);

struct Capabilities {
  bool distributions = true;
  bool hidden_states = true;
  bool gradients = true;
  bool generate = true;
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual int depth() const = 0;
  virtual int width() const = 0;
  virtual std::size_t context_limit() const = 0;
  virtual Capabilities capabilities() const = 0;

  virtual VocabDistribution next_distribution(std::span<const TokenId> context,
                                              std::span<const ResidualEdit> edits) const = 0;
  virtual HiddenState hidden_state(std::span<const TokenId> context, int layer,
                                   std::span<const ResidualEdit> edits) const = 0;
  /// Gradient of log P(target | context) with respect to the final-position
  /// residual state at `layer`, holding every other position fixed.
  virtual Vector grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                         std::span<const ResidualEdit> edits) const = 0;
  /// Prompt text to token ids, beginning-of-sequence included.
  virtual std::vector<TokenId> encode_prompt(std::string_view text) const;
  /// Stable identifier of the weights behind this handle.
  virtual std::string model_id() const { return "unknown"; }

  /// Greedy continuation; remote backends execute it server-side.
  virtual std::vector<TokenId> generate(std::span<const TokenId> context, std::size_t max_new,
                                        std::span<const TokenId> stop) const;

  VocabDistribution next_distribution(std::span<const TokenId> context) const {
    return next_distribution(context, {});
  }
  HiddenState hidden_state(std::span<const TokenId> context, int layer) const {
    return hidden_state(context, layer, {});
  }
  Vector grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer) const {
    return grad_logprob_wrt_hidden(context, target, layer, {});
  }

  int penultimate_layer() const { return depth() - 1; }
  void require_layer(int layer) const;
  void require_token(TokenId t) const;
  void require(bool Capabilities::*flag, const char* what) const;
};

/**
 * Model handle that routes one layer's final-position state through hooks.
 * Wraps (does not own) the base model; handles may be nested, inner hooks
 * applying first. Dropping the handle restores the base behavior exactly.
 */
class HookedModel final : public LanguageModel {
 public:
  explicit HookedModel(const LanguageModel& base) : base_(&base) {}

  /// Throws ValidationError if a hook is already registered at `layer`.
  HookedModel& add(ResidualEdit edit);
  bool remove(int layer);
  const std::vector<ResidualEdit>& edits() const { return edits_; }

  const Vocabulary& vocab() const override { return base_->vocab(); }
  int depth() const override { return base_->depth(); }
  int width() const override { return base_->width(); }
  std::size_t context_limit() const override { return base_->context_limit(); }
  Capabilities capabilities() const override { return base_->capabilities(); }
  std::vector<TokenId> encode_prompt(std::string_view text) const override { return base_->encode_prompt(text); }
  std::string model_id() const override { return base_->model_id(); }

  using LanguageModel::grad_logprob_wrt_hidden;
  using LanguageModel::hidden_state;
  using LanguageModel::next_distribution;
  VocabDistribution next_distribution(std::span<const TokenId> context,
                                      std::span<const ResidualEdit> edits) const override;
  HiddenState hidden_state(std::span<const TokenId> context, int layer,
                           std::span<const ResidualEdit> edits) const override;
  Vector grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                 std::span<const ResidualEdit> edits) const override;

 private:
  std::vector<ResidualEdit> combined(std::span<const ResidualEdit> extra) const;

  const LanguageModel* base_;
  std::vector<ResidualEdit> edits_;
};

HookedModel apply_activation_hook(const LanguageModel& model, int layer,
                                  std::function<Vector(const Vector&)> hook);

/// Counts next-token forward evaluations made through it.
class CountingModel final : public LanguageModel {
 public:
  explicit CountingModel(const LanguageModel& base) : base_(&base) {}

  std::size_t forward_steps() const { return count_.load(); }
  void reset() { count_ = 0; }

  const Vocabulary& vocab() const override { return base_->vocab(); }
  int depth() const override { return base_->depth(); }
  int width() const override { return base_->width(); }
  std::size_t context_limit() const override { return base_->context_limit(); }
  Capabilities capabilities() const override { return base_->capabilities(); }
  std::vector<TokenId> encode_prompt(std::string_view text) const override { return base_->encode_prompt(text); }
  std::string model_id() const override { return base_->model_id(); }

  using LanguageModel::grad_logprob_wrt_hidden;
  using LanguageModel::hidden_state;
  using LanguageModel::next_distribution;
  VocabDistribution next_distribution(std::span<const TokenId> context,
                                      std::span<const ResidualEdit> edits) const override {
    ++count_;
    return base_->next_distribution(context, edits);
  }
  HiddenState hidden_state(std::span<const TokenId> context, int layer,
                           std::span<const ResidualEdit> edits) const override {
    return base_->hidden_state(context, layer, edits);
  }
  Vector grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                 std::span<const ResidualEdit> edits) const override {
    return base_->grad_logprob_wrt_hidden(context, target, layer, edits);
  }

 private:
  const LanguageModel* base_;
  mutable std::atomic<std::size_t> count_{0};
};

}  // namespace pivot
