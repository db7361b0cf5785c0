#include "pivot/branching.hpp"

#include "pivot/error.hpp"
#include "pivot/numeric.hpp"

#include "json.hpp"

#include <algorithm>

namespace pivot {

void BranchConfig::validate() const {
  if (k < 2) throw ValidationError("branching needs K >= 2");
  if (lookahead < 1) throw ValidationError("branching needs L >= 1");
  if (!(eps > 0)) throw ValidationError("branching needs eps > 0");
  if (tie_break != "prior-then-lexical") throw ValidationError("unknown tie-break rule '" + tie_break + "'");
}

TriggerDecision should_branch(const VocabDistribution& dist, const Vocabulary& vocab,
                              const ConnectiveLexicon& lexicon, std::size_t k) {
  TriggerDecision out;
  const auto top = dist.top_k(k);
  for (const auto& [id, p] : top) {
    const ConnectivePhrase* phrase = lexicon.find(vocab.piece(id));
    if (phrase == nullptr || vocab.is_special(id)) continue;
    BranchCandidate c;
    c.phrase = *phrase;
    c.tokens = {id};
    c.prior_prob = p;
    out.candidates.push_back(std::move(c));
  }
  const bool top1_connective = !top.empty() && !out.candidates.empty() && out.candidates.front().tokens[0] == top[0].first;
  out.triggered = top1_connective && out.candidates.size() >= 2;
  return out;
}

LookaheadResult lookahead_eval(const LanguageModel& model, std::span<const TokenId> context,
                               std::span<const TokenId> candidate, std::size_t L) {
  if (L < 1) throw ValidationError("lookahead length must be at least 1");
  if (candidate.empty()) throw ValidationError("lookahead candidate tokenizes to nothing");
  std::vector<TokenId> ctx(context.begin(), context.end());
  ctx.insert(ctx.end(), candidate.begin(), candidate.end());
  if (ctx.size() >= model.context_limit()) throw ValidationError("no room for lookahead within the context limit");
  LookaheadResult r;
  const TokenId eos = model.vocab().eos();
  for (std::size_t j = 0; j < L; ++j) {
    const auto d = model.next_distribution(ctx);
    const TokenId y = d.argmax();
    r.H += d.entropy;
    r.S += d.log_prob(y);
    ++r.length;
    if (y == eos) {
      r.immediate_eos = j == 0;
      break;
    }
    ctx.push_back(y);
    if (ctx.size() >= model.context_limit()) break;
  }
  r.H /= static_cast<double>(r.length);
  r.S /= static_cast<double>(r.length);
  return r;
}

std::size_t select_branch(std::vector<BranchCandidate>& candidates, double eps) {
  if (candidates.size() < 2) throw ValidationError("branch selection needs at least two candidates");
  const auto m = static_cast<Eigen::Index>(candidates.size());
  Vector h(m), s(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    h(i) = candidates[static_cast<std::size_t>(i)].H;
    s(i) = candidates[static_cast<std::size_t>(i)].S;
  }
  const Vector hz = zscores(h, eps);
  const Vector sz = zscores(s, eps);
  std::size_t best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto& c = candidates[i];
    c.H_z = hz(static_cast<Eigen::Index>(i));
    c.S_z = sz(static_cast<Eigen::Index>(i));
    c.score = c.H_z - c.S_z;
  }
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& b = candidates[best];
    if (c.score < b.score) {
      best = i;
    } else if (c.score == b.score) {
      if (c.prior_prob > b.prior_prob || (c.prior_prob == b.prior_prob && c.phrase.surface < b.phrase.surface)) {
        best = i;
      }
    }
  }
  return best;
}

BranchResult branch_decode(const LanguageModel& model, std::span<const TokenId> prompt,
                           const ConnectiveLexicon& lexicon, const BranchConfig& cfg, const DecodeOptions& options,
                           std::string prompt_id, std::string gold) {
  cfg.validate();
  BranchResult out;
  std::size_t lookahead_total = 0;
  DecodeSession s(model, {prompt.begin(), prompt.end()}, lexicon, options);
  while (!s.finished()) {
    const auto d = s.distribution();
    auto trig = should_branch(d, model.vocab(), lexicon, cfg.k);
    if (!trig.triggered) {
      s.emit(d.argmax(), d);
      continue;
    }
    PivotLog log;
    log.pivot_pos = s.step_count();
    log.candidates = std::move(trig.candidates);
    bool all_eos = true;
    for (auto& c : log.candidates) {
      const auto r = lookahead_eval(model, s.context(), c.tokens, cfg.lookahead);
      c.H = r.H;
      c.S = r.S;
      c.lookahead_length = r.length;
      c.immediate_eos = r.immediate_eos;
      log.forward_steps += r.length;
      all_eos = all_eos && r.immediate_eos;
    }
    log.chosen = select_branch(log.candidates, cfg.eps);
    if (all_eos) {
      log.fallback = true;
      log.chosen = 0;
    }
    lookahead_total += log.forward_steps;
    const auto& chosen = log.candidates[log.chosen];
    s.emit(chosen.tokens.front(), d, chosen.tokens.front() != d.argmax());
    out.log.push_back(std::move(log));
  }
  out.trace = s.finish(std::move(prompt_id), std::move(gold));
  out.total_forward_steps = out.trace.forward_steps + lookahead_total;
  return out;
}

double match_rate_eval(const LanguageModel& model, const std::vector<PivotItem>& items,
                       const ConnectiveLexicon& lexicon, const BranchConfig& cfg) {
  cfg.validate();
  if (items.empty()) throw ValidationError("match-rate evaluation needs at least one pivot");
  const Vocabulary& vocab = model.vocab();
  std::size_t hits = 0;
  for (const auto& item : items) {
    if (item.distractors.empty()) throw ValidationError("pivot item needs at least one distractor");
    const auto d = model.next_distribution(item.context);
    std::vector<BranchCandidate> cands;
    auto add = [&](const std::string& surface) {
      const ConnectivePhrase* p = lexicon.find(surface);
      BranchCandidate c;
      c.phrase = p ? *p : ConnectivePhrase{normalize_text(surface), RelationClass::Causal};
      c.tokens = vocab.tokenize(surface);
      if (c.tokens.empty()) throw ValidationError("candidate '" + surface + "' tokenizes to nothing");
      c.prior_prob = d.prob(c.tokens.front());
      const auto r = lookahead_eval(model, item.context, c.tokens, cfg.lookahead);
      c.H = r.H;
      c.S = r.S;
      c.lookahead_length = r.length;
      cands.push_back(std::move(c));
    };
    add(item.gold);
    for (const auto& x : item.distractors) {
      if (normalize_text(x) == normalize_text(item.gold)) {
        throw ValidationError("distractor '" + x + "' is identical to the gold connective");
      }
      add(x);
    }
    if (select_branch(cands, cfg.eps) == 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

std::string pivot_log_to_json(const PivotLog& p) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : p.candidates) {
    cands.push_back({{"phrase", c.phrase.surface},
                     {"prior", c.prior_prob},
                     {"H", c.H},
                     {"S", c.S},
                     {"score", c.score},
                     {"lookahead_length", c.lookahead_length}});
  }
  nlohmann::json j = {{"pivot_pos", p.pivot_pos},
                      {"candidates", cands},
                      {"chosen", p.candidates.at(p.chosen).phrase.surface},
                      {"forward_steps", p.forward_steps},
                      {"fallback", p.fallback}};
  return j.dump();
}

}  // namespace pivot
