#pragma once

/**
 * Greedy decoding sessions and generation traces.
 *
 * A trace records, per generated token, the top-K candidates, the entropy of
 * the full next-token distribution and the connective match (if any) ending
 * at that token. Stop tokens terminate a session without being recorded as a
 * step, but the forward evaluation that produced them is counted.
 */

#include "pivot/lexicon.hpp"
#include "pivot/lm.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace pivot {

enum class Termination { eos, max_len };

std::string_view to_string(Termination t);

struct StepRecord {
  TokenId token = 0;
  std::string piece;
  std::vector<std::pair<TokenId, double>> top_k;
  std::vector<std::string> top_k_pieces;
  double entropy = 0.0;
  /// Match ending at this step; positions are step indices.
  std::optional<ConnectiveMatch> connective;
  /// Set when the match starts at the first generated token.
  bool at_first_step = false;
  std::string category;
  bool intervened = false;
};

struct GenerationTrace {
  std::string prompt_id;
  std::vector<TokenId> prompt;
  std::vector<StepRecord> steps;
  Termination terminated_by = Termination::max_len;
  std::optional<std::string> answer;
  std::string gold;
  std::size_t forward_steps = 0;

  std::vector<TokenId> completion_tokens() const;
  /// Prompt followed by the tokens of steps [0, step).
  std::vector<TokenId> context_before(std::size_t step) const;
  /// Matches in step order.
  std::vector<ConnectiveMatch> connectives() const;
};

struct DecodeOptions {
  std::size_t max_len = 64;
  std::size_t top_k = 20;
  /// Empty means the vocabulary's end-of-sequence token.
  std::vector<TokenId> stop;
};

/**
 * Incremental decoder. Callers pick tokens from distributions the session
 * computes; every computed distribution counts as one forward step.
 */
class DecodeSession {
 public:
  DecodeSession(const LanguageModel& model, std::vector<TokenId> prompt, const ConnectiveLexicon& lexicon,
                DecodeOptions options = {});
  /// Continues from steps [0, step) of an existing trace (forward count restarts at zero).
  static DecodeSession resume(const LanguageModel& model, const GenerationTrace& trace, std::size_t step,
                              const ConnectiveLexicon& lexicon, DecodeOptions options = {});

  const std::vector<TokenId>& context() const { return context_; }
  std::size_t step_count() const { return steps_.size(); }
  bool finished() const { return termination_.has_value(); }
  std::size_t forward_steps() const { return forward_steps_; }
  const LanguageModel& model() const { return *model_; }
  const DecodeOptions& options() const { return options_; }

  VocabDistribution distribution(std::span<const ResidualEdit> edits = {});
  /// Appends `token` chosen under `dist`. A stop token ends the session unrecorded.
  void emit(TokenId token, const VocabDistribution& dist, bool intervened = false);
  /// One greedy step; returns the emitted token.
  TokenId step_greedy(std::span<const ResidualEdit> edits = {});
  /// Emits `tokens` in order. The first uses `first`; each later token gets a
  /// freshly computed distribution for its step record.
  void force(std::span<const TokenId> tokens, const VocabDistribution& first, bool intervened = true);
  /// Greedy steps until a stop token or the length limit.
  void run_greedy(std::span<const ResidualEdit> edits = {});

  GenerationTrace finish(std::string prompt_id = {}, std::string gold = {});

 private:
  bool is_stop(TokenId t) const;

  const LanguageModel* model_;
  const ConnectiveLexicon* lexicon_;
  DecodeOptions options_;
  std::vector<TokenId> prompt_;
  std::vector<TokenId> context_;
  std::vector<StepRecord> steps_;
  std::optional<Termination> termination_;
  std::size_t forward_steps_ = 0;
};

GenerationTrace greedy_decode(const LanguageModel& model, std::span<const TokenId> prompt,
                              const ConnectiveLexicon& lexicon, const DecodeOptions& options = {},
                              std::string prompt_id = {}, std::string gold = {});

/**
 * Regenerates greedily from step `step` of `trace` with `replacement` forced
 * verbatim in place of the original tokens there.
 */
GenerationTrace force_and_continue(const LanguageModel& model, const GenerationTrace& trace, std::size_t step,
                                   std::span<const TokenId> replacement, const ConnectiveLexicon& lexicon,
                                   const DecodeOptions& options = {});

/// Mean log-probability (nats per token) of `continuation` after `prefix`.
double sequence_logprob(const LanguageModel& model, std::span<const TokenId> prefix,
                        std::span<const TokenId> continuation);

/// Fills connective annotations and the answer field from the step tokens.
void annotate_trace(GenerationTrace& trace, const Vocabulary& vocab, const ConnectiveLexicon& lexicon);

std::string completion_text(const GenerationTrace& trace, const Vocabulary& vocab);

// JSONL persistence. Tokens are stored as pieces alongside their ids.
std::string trace_to_json(const GenerationTrace& trace, const Vocabulary& vocab);
GenerationTrace trace_from_json(const std::string& line);
void write_traces(const std::string& path, const std::vector<GenerationTrace>& traces, const Vocabulary& vocab);
std::vector<GenerationTrace> read_traces(const std::string& path);

}  // namespace pivot
