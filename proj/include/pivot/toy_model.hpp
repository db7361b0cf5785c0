#pragma once

/**
 * Deterministic toy transformer with hand-written reverse-mode gradients.
 *
 * Pre-LayerNorm decoder: token + learned position embeddings, `depth` blocks
 * of causal multi-head attention and a GELU MLP, final LayerNorm and an
 * untied unembedding. Parameters live in one flat vector; tensors are
 * row-major views into it. Everything runs in double precision and a fixed
 * spec (including the seed) reproduces parameters and outputs bit for bit.
 */

#include "pivot/lm.hpp"
#include "pivot/toy_grammar.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace pivot {

struct ToyTrainConfig {
  int steps = 2500;
  int batch = 16;
  double learning_rate = 3e-3;
  int warmup = 100;
  double clip_norm = 1.0;
};

struct ToyModelSpec {
  int depth = 2;
  int width = 32;
  int heads = 2;
  int mlp_multiplier = 4;
  std::size_t context_limit = 48;
  std::uint64_t seed = 7;
  ToyGrammarConfig corpus;
  ToyTrainConfig train;

  static ToyModelSpec load(const std::string& path);
  static ToyModelSpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

/// Adam moments for a flat parameter vector.
struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};

class ToyTransformer final : public LanguageModel {
 public:
  /// Fresh model with seeded random initialization.
  ToyTransformer(ToyModelSpec spec, Vocabulary vocab);
  ~ToyTransformer() override;
  ToyTransformer(const ToyTransformer&);
  ToyTransformer& operator=(const ToyTransformer&);

  /// Builds the grammar from the spec, initializes and trains to completion.
  static ToyTransformer train_from_spec(const ToyModelSpec& spec, std::vector<double>* loss_log = nullptr);
  static ToyTransformer load(const std::string& path);
  void save(const std::string& path) const;

  const ToyModelSpec& spec() const { return spec_; }
  const Vocabulary& vocab() const override { return vocab_; }
  int depth() const override { return spec_.depth; }
  int width() const override { return spec_.width; }
  std::size_t context_limit() const override { return spec_.context_limit; }
  Capabilities capabilities() const override { return {}; }
  /// "toy-" followed by a hash of the parameters and vocabulary.
  std::string model_id() const override;

  using LanguageModel::grad_logprob_wrt_hidden;
  using LanguageModel::hidden_state;
  using LanguageModel::next_distribution;
  VocabDistribution next_distribution(std::span<const TokenId> context,
                                      std::span<const ResidualEdit> edits) const override;
  HiddenState hidden_state(std::span<const TokenId> context, int layer,
                           std::span<const ResidualEdit> edits) const override;
  Vector grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                 std::span<const ResidualEdit> edits) const override;

  const Vector& parameters() const { return theta_; }
  Vector& parameters() { return theta_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(theta_.size()); }

  /// Logits for every position (T x V).
  Matrix logits_all(std::span<const TokenId> context) const;
  /// Final-position logits.
  Vector last_logits(std::span<const TokenId> context, std::span<const ResidualEdit> edits = {}) const;

  /**
   * Parameter gradient of a scalar loss given its gradient with respect to
   * the logits. `dlogits` has one row per context position; rows that are
   * zero contribute nothing.
   */
  Vector parameter_gradient(std::span<const TokenId> context, const Matrix& dlogits) const;

  /// Mean next-token cross-entropy over targets at positions >= loss_from,
  /// accumulating its parameter gradient (scaled by `weight`) into `grad`.
  double cross_entropy_and_gradient(std::span<const TokenId> sequence, std::size_t loss_from, double weight,
                                    Vector& grad) const;

  /// One Adam update with global-norm clipping (clip <= 0 disables it).
  void adam_step(const Vector& grad, double lr, AdamState& state, double clip_norm = 0.0);

 private:
  struct Layout;
  struct Forward;

  Forward run_forward(std::span<const TokenId> context, std::span<const ResidualEdit> edits, int stop_layer,
                      bool all_logit_rows) const;
  /// Back-propagates `d_top` (gradient w.r.t. layer `depth`) down to `down_to_layer`,
  /// returning the gradient at that layer. Accumulates parameter gradients when `grad` is set.
  Matrix backward_blocks(const Forward& f, Matrix d_top, int down_to_layer, Vector* grad) const;
  Matrix backward_head(const Forward& f, const Matrix& dlogits, Vector* grad) const;

  ToyModelSpec spec_;
  Vocabulary vocab_;
  std::unique_ptr<Layout> layout_;
  Vector theta_;
};

}  // namespace pivot
