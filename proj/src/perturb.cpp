#include "pivot/perturb.hpp"

#include "pivot/answer.hpp"
#include "pivot/diagnostics.hpp"
#include "pivot/error.hpp"
#include "pivot/numeric.hpp"
#include "pivot/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <map>

namespace pivot {
namespace {

const ConnectiveEvent* event_at(const std::vector<ConnectiveEvent>& events, std::size_t step) {
  for (const auto& e : events) {
    if (e.first_step == step) return &e;
  }
  return nullptr;
}

}  // namespace

std::string_view to_string(ReplacementPolicy p) {
  switch (p) {
    case ReplacementPolicy::random_any: return "random-any";
    case ReplacementPolicy::same_class: return "same-class";
    case ReplacementPolicy::cross_class: return "cross-class";
    case ReplacementPolicy::non_connective_random: return "non-connective-random";
  }
  return "random-any";
}

ReplacementPolicy replacement_policy_from_string(std::string_view s) {
  for (auto p : {ReplacementPolicy::random_any, ReplacementPolicy::same_class, ReplacementPolicy::cross_class,
                 ReplacementPolicy::non_connective_random}) {
    if (to_string(p) == s) return p;
  }
  throw ValidationError("unknown replacement policy '" + std::string(s) + "'");
}

std::vector<ConnectivePhrase> tokenizable_phrases(const ConnectiveLexicon& lexicon, const Vocabulary& vocab) {
  std::vector<ConnectivePhrase> out;
  for (const auto& p : lexicon.phrases()) {
    try {
      if (!vocab.tokenize(p.surface).empty()) out.push_back(p);
    } catch (const ValidationError&) {
    }
  }
  return out;
}

bool trace_correct(const GenerationTrace& trace) {
  return trace.answer && check_answer("\\boxed{" + *trace.answer + "}", trace.gold);
}

std::optional<std::size_t> choose_pivot(const GenerationTrace& trace, const ConnectiveLexicon& lexicon,
                                        std::uint64_t seed) {
  const auto events = connective_events(trace, lexicon);
  if (events.empty()) return std::nullopt;
  Rng rng(derive_seed(seed, "pivot:" + trace.prompt_id));
  return events[rng.below(events.size())].first_step;
}

PerturbationResult perturb_at_pivot(const LanguageModel& model, const GenerationTrace& trace, std::size_t pivot_step,
                                    ReplacementPolicy policy, const ConnectiveLexicon& lexicon, std::uint64_t seed,
                                    const DecodeOptions& options) {
  if (pivot_step >= trace.steps.size()) throw ValidationError("pivot step beyond trace length");
  const Vocabulary& vocab = model.vocab();
  Rng rng(derive_seed(seed, trace.prompt_id + "@" + std::to_string(pivot_step) + ":" + std::string(to_string(policy))));

  PerturbationResult r;
  r.prompt_id = trace.prompt_id;
  r.pivot_step = pivot_step;
  r.policy = policy;
  r.original_correct = trace_correct(trace);

  std::vector<TokenId> replacement;
  std::size_t resume_at = pivot_step;
  if (policy == ReplacementPolicy::non_connective_random) {
    const auto mask = connective_mask(trace, lexicon);
    if (mask[pivot_step]) throw ValidationError("non-connective policy applied at a connective step");
    const auto& step = trace.steps[pivot_step];
    r.original = normalize_text(step.piece);
    std::vector<TokenId> pool;
    const std::size_t width = std::min<std::size_t>(5, step.top_k.size());
    for (std::size_t j = 0; j < width; ++j) {
      const TokenId t = step.top_k[j].first;
      if (t == step.token || vocab.is_special(t)) continue;
      if (is_connective_token(vocab.piece(t), lexicon)) continue;
      pool.push_back(t);
    }
    if (pool.empty()) throw ValidationError("no non-connective replacement among the top-5 candidates");
    replacement.push_back(pool[rng.below(pool.size())]);
    r.replacement = normalize_text(vocab.piece(replacement.front()));
  } else {
    const auto events = connective_events(trace, lexicon);
    const ConnectiveEvent* ev = event_at(events, pivot_step);
    if (ev == nullptr) throw ValidationError("pivot step is not the start of a connective");
    r.original = ev->phrase.surface;
    r.original_class = ev->phrase.relation;
    std::vector<ConnectivePhrase> pool;
    for (const auto& p : tokenizable_phrases(lexicon, vocab)) {
      if (p.surface == ev->phrase.surface) continue;
      if (policy == ReplacementPolicy::same_class && !same_class(p, ev->phrase)) continue;
      if (policy == ReplacementPolicy::cross_class && same_class(p, ev->phrase)) continue;
      pool.push_back(p);
    }
    if (pool.empty()) {
      throw ValidationError("policy " + std::string(to_string(policy)) + " has no replacement for '" + r.original +
                            "'");
    }
    const auto& chosen = pool[rng.below(pool.size())];
    r.replacement = chosen.surface;
    r.replacement_class = chosen.relation;
    replacement = vocab.tokenize(chosen.surface);
  }

  const auto regenerated = force_and_continue(model, trace, resume_at, replacement, lexicon, options);
  r.perturbed_answer = regenerated.answer;
  r.perturbed_correct = trace_correct(regenerated);
  return r;
}

// ---------------------------------------------------------------------------

FlipMatrix FlipMatrix::from_counts(double cc, double ci, double ii, double ic) {
  if (cc < 0 || ci < 0 || ii < 0 || ic < 0) throw ValidationError("flip counts must be nonnegative");
  FlipMatrix m;
  m.counts = {cc, ci, ii, ic};
  return m;
}

std::array<double, 4> FlipMatrix::rates() const {
  const double n = total();
  if (!(n > 0)) throw ValidationError("flip matrix is empty");
  return {100.0 * counts[0] / n, 100.0 * counts[1] / n, 100.0 * counts[2] / n, 100.0 * counts[3] / n};
}

FlipMatrix flip_matrix(const std::vector<PerturbationResult>& results) {
  if (results.empty()) throw ValidationError("flip matrix needs at least one result");
  FlipMatrix m;
  for (const auto& r : results) {
    if (r.original_correct) {
      m.counts[r.perturbed_correct ? 0 : 1] += 1;
    } else {
      m.counts[r.perturbed_correct ? 3 : 2] += 1;
    }
  }
  return m;
}

ConditionalRates conditional_rates(const FlipMatrix& m) {
  ConditionalRates out;
  const double correct = m.counts[0] + m.counts[1];
  const double incorrect = m.counts[2] + m.counts[3];
  if (correct > 0) out.fragility = 100.0 * m.counts[1] / correct;
  if (incorrect > 0) out.repair = 100.0 * m.counts[3] / incorrect;
  return out;
}

std::vector<PolicyReport> controlled_replacement_study(const LanguageModel& model,
                                                       const std::vector<GenerationTrace>& traces,
                                                       const ConnectiveLexicon& lexicon, std::uint64_t seed,
                                                       const DecodeOptions& options) {
  std::vector<const GenerationTrace*> correct;
  for (const auto& t : traces) {
    if (trace_correct(t)) correct.push_back(&t);
  }
  if (correct.empty()) throw ValidationError("controlled replacement study needs originally correct traces");

  std::vector<double> all_entropies;
  for (const auto* t : correct) {
    for (const auto& s : t->steps) all_entropies.push_back(s.entropy);
  }
  const double tail = quantile_linear(all_entropies, 0.9);

  std::vector<PolicyReport> out;
  for (auto policy : {ReplacementPolicy::random_any, ReplacementPolicy::same_class,
                      ReplacementPolicy::non_connective_random}) {
    PolicyReport rep;
    rep.policy = policy;
    for (const auto* t : correct) {
      std::optional<std::size_t> pivot;
      if (policy == ReplacementPolicy::non_connective_random) {
        const auto mask = connective_mask(*t, lexicon);
        std::vector<std::size_t> eligible;
        for (std::size_t i = 0; i < t->steps.size(); ++i) {
          if (!mask[i] && t->steps[i].entropy >= tail) eligible.push_back(i);
        }
        if (eligible.empty()) continue;
        Rng rng(derive_seed(seed, "control:" + t->prompt_id));
        pivot = eligible[rng.below(eligible.size())];
      } else {
        pivot = choose_pivot(*t, lexicon, seed);
      }
      if (!pivot) continue;
      try {
        rep.results.push_back(perturb_at_pivot(model, *t, *pivot, policy, lexicon, seed, options));
      } catch (const ValidationError&) {
        continue;  // no candidate for this position under this policy
      }
    }
    if (rep.results.empty()) {
      throw ValidationError("policy " + std::string(to_string(policy)) + " has no eligible positions");
    }
    rep.n = rep.results.size();
    for (const auto& r : rep.results) rep.c_to_i += r.perturbed_correct ? 0 : 1;
    rep.rate_pct = 100.0 * static_cast<double>(rep.c_to_i) / static_cast<double>(rep.n);
    out.push_back(std::move(rep));
  }
  return out;
}

std::vector<TransitionRate> relation_shift_repair(const std::vector<PerturbationResult>& results) {
  std::map<std::pair<int, int>, TransitionRate> cells;
  for (const auto& r : results) {
    if (r.original_correct || !r.original_class || !r.replacement_class) continue;
    const auto key = std::make_pair(static_cast<int>(*r.original_class), static_cast<int>(*r.replacement_class));
    auto& c = cells[key];
    c.source = *r.original_class;
    c.target = *r.replacement_class;
    c.cross_class = c.source != c.target;
    if (r.perturbed_correct) {
      ++c.i_to_c;
    } else {
      ++c.i_to_i;
    }
  }
  std::vector<TransitionRate> out;
  for (auto& [key, c] : cells) {
    const std::size_t n = c.i_to_c + c.i_to_i;
    if (n > 0) c.repair_pct = 100.0 * static_cast<double>(c.i_to_c) / static_cast<double>(n);
    out.push_back(c);
  }
  return out;
}

std::string perturbation_to_json(const PerturbationResult& r) {
  nlohmann::json j = {{"prompt_id", r.prompt_id},
                      {"pivot_step", r.pivot_step},
                      {"policy", std::string(to_string(r.policy))},
                      {"original", r.original},
                      {"replacement", r.replacement},
                      {"original_correct", r.original_correct},
                      {"perturbed_correct", r.perturbed_correct}};
  j["original_class"] = r.original_class ? nlohmann::json(std::string(to_string(*r.original_class))) : nullptr;
  j["replacement_class"] =
      r.replacement_class ? nlohmann::json(std::string(to_string(*r.replacement_class))) : nullptr;
  j["perturbed_answer"] = r.perturbed_answer ? nlohmann::json(*r.perturbed_answer) : nullptr;
  return j.dump();
}

}  // namespace pivot
