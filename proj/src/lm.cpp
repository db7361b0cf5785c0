#include "pivot/lm.hpp"

#include "pivot/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace pivot {

VocabDistribution VocabDistribution::from_logits(const Vector& logits) {
  VocabDistribution d;
  d.log_probs = log_softmax(logits);
  d.probs = d.log_probs.array().exp().matrix();
  d.entropy = entropy_from_log_probs(d.log_probs);
  return d;
}

VocabDistribution VocabDistribution::from_probs(Vector probs, std::optional<double> server_entropy) {
  if (probs.size() == 0) throw ValidationError("distribution invariant violated: empty probability vector");
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (!std::isfinite(probs(i)) || probs(i) < 0) {
      throw ValidationError("distribution invariant violated: probabilities must be finite and nonnegative");
    }
  }
  const double sum = probs.sum();
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ValidationError("distribution invariant violated: probabilities sum to " + std::to_string(sum) +
                          ", expected 1 within 1e-6");
  }
  VocabDistribution d;
  d.entropy = pivot::entropy(probs);
  if (server_entropy) {
    const double h = *server_entropy;
    const double upper = std::log(static_cast<double>(probs.size()));
    if (!std::isfinite(h) || h < -1e-9 || h > upper + 1e-9) {
      throw ValidationError("distribution invariant violated: entropy outside [0, ln|V|]");
    }
    if (std::abs(h - d.entropy) > 1e-6) {
      throw ValidationError("distribution invariant violated: reported entropy disagrees with probabilities");
    }
    d.entropy = h;
  }
  d.log_probs = probs.array().log().matrix();
  d.probs = std::move(probs);
  return d;
}

TokenId VocabDistribution::argmax() const {
  Eigen::Index best = 0;
  probs.maxCoeff(&best);
  return static_cast<TokenId>(best);
}

std::vector<std::pair<TokenId, double>> VocabDistribution::top_k(std::size_t k) const {
  std::vector<TokenId> ids(size());
  std::iota(ids.begin(), ids.end(), 0);
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) {
                      if (probs(a) != probs(b)) return probs(a) > probs(b);
                      return a < b;
                    });
  std::vector<std::pair<TokenId, double>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(ids[i], probs(ids[i]));
  return out;
}

ResidualEdit additive_edit(int layer, Vector delta) {
  ResidualEdit e;
  e.layer = layer;
  e.additive = delta;
  e.map = [d = std::move(delta)](const Vector& h) -> Vector { return h + d; };
  return e;
}

std::vector<TokenId> LanguageModel::generate(std::span<const TokenId> context, std::size_t max_new,
                                             std::span<const TokenId> stop) const {
  std::vector<TokenId> seq(context.begin(), context.end());
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < max_new; ++i) {
    const TokenId t = next_distribution(seq).argmax();
    out.push_back(t);
    if (std::find(stop.begin(), stop.end(), t) != stop.end()) break;
    seq.push_back(t);
  }
  return out;
}

std::vector<TokenId> LanguageModel::encode_prompt(std::string_view text) const {
  std::vector<TokenId> ids{vocab().bos()};
  const auto body = vocab().tokenize(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

void LanguageModel::require_layer(int layer) const {
  if (layer < 0 || layer > depth()) {
    throw ValidationError("invalid layer " + std::to_string(layer) + " (valid: 0.." + std::to_string(depth()) + ")");
  }
}

void LanguageModel::require_token(TokenId t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= vocab().size()) {
    throw ValidationError("token id " + std::to_string(t) + " outside vocabulary");
  }
}

void LanguageModel::require(bool Capabilities::*flag, const char* what) const {
  if (!(capabilities().*flag)) {
    throw CapabilityError(std::string("model backend lacks required capability: ") + what);
  }
}

HookedModel& HookedModel::add(ResidualEdit edit) {
  require_layer(edit.layer);
  for (const auto& e : edits_) {
    if (e.layer == edit.layer) {
      throw ValidationError("a hook is already registered at layer " + std::to_string(edit.layer));
    }
  }
  edits_.push_back(std::move(edit));
  return *this;
}

bool HookedModel::remove(int layer) {
  const auto before = edits_.size();
  std::erase_if(edits_, [&](const ResidualEdit& e) { return e.layer == layer; });
  return edits_.size() != before;
}

std::vector<ResidualEdit> HookedModel::combined(std::span<const ResidualEdit> extra) const {
  std::vector<ResidualEdit> all = edits_;
  all.insert(all.end(), extra.begin(), extra.end());
  return all;
}

VocabDistribution HookedModel::next_distribution(std::span<const TokenId> context,
                                                 std::span<const ResidualEdit> edits) const {
  return base_->next_distribution(context, combined(edits));
}

HiddenState HookedModel::hidden_state(std::span<const TokenId> context, int layer,
                                      std::span<const ResidualEdit> edits) const {
  return base_->hidden_state(context, layer, combined(edits));
}

Vector HookedModel::grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                            std::span<const ResidualEdit> edits) const {
  return base_->grad_logprob_wrt_hidden(context, target, layer, combined(edits));
}

HookedModel apply_activation_hook(const LanguageModel& model, int layer,
                                  std::function<Vector(const Vector&)> hook) {
  HookedModel hooked(model);
  hooked.add(ResidualEdit{layer, std::move(hook), std::nullopt});
  return hooked;
}

}  // namespace pivot
