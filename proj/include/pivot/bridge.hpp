#pragma once

/**
 * Client for the model wire protocol (JSON over HTTP). See docs/bridge-protocol.md
 * for the request and response schemas.
 *
 * The handle discovers capabilities, vocabulary and shape at connect time and
 * validates every distribution through VocabDistribution::from_probs. It is
 * safe for concurrent use; at most `max_in_flight` requests are outstanding.
 */

#include "pivot/lm.hpp"

#include <memory>
#include <string>

namespace pivot {

inline constexpr int kBridgeProtocolVersion = 1;

struct BridgeEndpoint {
  std::string base_url;       // e.g. http://127.0.0.1:8700
  double timeout_seconds = 30.0;
  std::string bearer_token;   // empty: no Authorization header
  int max_in_flight = 4;
  int retries = 2;            // connection-level retries of idempotent calls
  std::size_t top_k = 20;     // top-K requested alongside the full vector

  /// PIVOT_BRIDGE_ENDPOINT and PIVOT_BRIDGE_TOKEN; `url` overrides the former when non-empty.
  static BridgeEndpoint from_env(const std::string& url = "");
};

class BridgeModel final : public LanguageModel {
 public:
  /// Throws BackendError when unreachable, ProtocolError on a version mismatch.
  static std::unique_ptr<BridgeModel> connect(const BridgeEndpoint& endpoint);
  ~BridgeModel() override;

  const Vocabulary& vocab() const override;
  int depth() const override;
  int width() const override;
  std::size_t context_limit() const override;
  Capabilities capabilities() const override;
  std::string model_id() const override;
  std::vector<TokenId> encode_prompt(std::string_view text) const override;

  using LanguageModel::grad_logprob_wrt_hidden;
  using LanguageModel::hidden_state;
  using LanguageModel::next_distribution;
  VocabDistribution next_distribution(std::span<const TokenId> context,
                                      std::span<const ResidualEdit> edits) const override;
  HiddenState hidden_state(std::span<const TokenId> context, int layer,
                           std::span<const ResidualEdit> edits) const override;
  Vector grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                 std::span<const ResidualEdit> edits) const override;
  /// Never retried.
  std::vector<TokenId> generate(std::span<const TokenId> context, std::size_t max_new,
                                std::span<const TokenId> stop) const override;

  const BridgeEndpoint& endpoint() const;

 private:
  struct Impl;
  explicit BridgeModel(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace pivot
