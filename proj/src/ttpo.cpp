#include "pivot/ttpo.hpp"

#include "pivot/diagnostics.hpp"
#include "pivot/error.hpp"
#include "pivot/numeric.hpp"
#include "pivot/perturb.hpp"
#include "pivot/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace pivot {
namespace {

using Json = nlohmann::json;

struct Branch {
  ConnectivePhrase phrase;
  std::vector<TokenId> tokens;
  double prior = 0.0;
  bool correct = false;
};

bool by_prior(const Branch& a, const Branch& b) {
  if (a.prior != b.prior) return a.prior > b.prior;
  return a.phrase.surface < b.phrase.surface;
}

}  // namespace

std::vector<PreferencePair> build_preference_pairs(const LanguageModel& model, const std::vector<PromptTask>& tasks,
                                                   const ConnectiveLexicon& lexicon, std::size_t n_alternatives,
                                                   std::uint64_t seed, const DecodeOptions& options,
                                                   std::vector<PairBuildLog>* log) {
  if (n_alternatives < 1) throw ValidationError("n_alternatives must be at least 1");
  const Vocabulary& vocab = model.vocab();
  const auto pool_all = tokenizable_phrases(lexicon, vocab);
  std::vector<PreferencePair> pairs;
  for (const auto& task : tasks) {
    if (task.gold.empty()) throw ValidationError("task " + task.id + " has no gold answer");
    PairBuildLog entry;
    entry.prompt_id = task.id;
    auto trace = greedy_decode(model, task.prompt, lexicon, options, task.id, task.gold);

    std::optional<std::size_t> pivot;
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
      if (is_connective_token(trace.steps[i].piece, lexicon)) {
        pivot = i;
        break;
      }
    }
    if (!pivot) {
      entry.status = "no-pivot";
      if (log) log->push_back(std::move(entry));
      continue;
    }
    entry.pivot_pos = *pivot;
    const auto context = trace.context_before(*pivot);
    const auto dist = model.next_distribution(context);

    std::vector<Branch> branches;
    const ConnectivePhrase greedy_phrase = *lexicon.find(trace.steps[*pivot].piece);
    branches.push_back({greedy_phrase, {trace.steps[*pivot].token}, 0.0, trace_correct(trace)});
    std::vector<ConnectivePhrase> pool;
    for (const auto& p : pool_all) {
      if (p.surface != greedy_phrase.surface) pool.push_back(p);
    }
    Rng rng(derive_seed(seed, "ttpo:" + task.id));
    for (std::size_t idx : rng.sample_indices(pool.size(), n_alternatives)) {
      Branch b{pool[idx], vocab.tokenize(pool[idx].surface), 0.0, false};
      b.correct = trace_correct(force_and_continue(model, trace, *pivot, b.tokens, lexicon, options));
      branches.push_back(std::move(b));
    }
    std::vector<Branch> pos, neg;
    for (auto& b : branches) {
      b.prior = dist.prob(b.tokens.front());
      entry.candidates.push_back(b.phrase.surface);
      (b.correct ? pos : neg).push_back(b);
    }
    if (pos.empty() || neg.empty()) {
      entry.status = pos.empty() ? "all-incorrect" : "all-correct";
      if (log) log->push_back(std::move(entry));
      continue;
    }
    std::sort(pos.begin(), pos.end(), by_prior);
    std::sort(neg.begin(), neg.end(), by_prior);
    bool made = false;
    for (const auto& c : pos) {
      for (const auto& r : neg) {
        if (c.tokens.front() == r.tokens.front()) continue;
        pairs.push_back({context, c.tokens.front(), r.tokens.front(), task.id, *pivot, c.phrase.surface,
                         r.phrase.surface, c.prior, r.prior});
        made = true;
        break;
      }
      if (made) break;
    }
    entry.status = made ? "pair" : "all-correct";
    if (log) log->push_back(std::move(entry));
  }
  return pairs;
}

double ttpo_delta(const LanguageModel& policy, const LanguageModel& reference, std::span<const TokenId> context,
                  TokenId w_c, TokenId w_r) {
  if (policy.vocab().size() != reference.vocab().size() || policy.vocab().pieces() != reference.vocab().pieces()) {
    throw ValidationError("policy and reference vocabularies differ");
  }
  const auto p = policy.next_distribution(context);
  const auto r = reference.next_distribution(context);
  return (p.log_prob(w_c) - r.log_prob(w_c)) - (p.log_prob(w_r) - r.log_prob(w_r));
}

double ttpo_loss(double delta, double beta) {
  if (!(beta > 0)) throw ValidationError("beta must be positive");
  return neg_log_sigmoid(beta * delta);
}

void TtpoConfig::validate() const {
  if (!(beta > 0)) throw ValidationError("beta must be positive");
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (!(learning_rate > 0)) throw ValidationError("learning rate must be positive");
}

Vector ttpo_gradient(const ToyTransformer& policy, double ref_logp_c, double ref_logp_r, const PreferencePair& pair,
                     double beta, std::span<const TokenId> continuation, double* delta_out) {
  const auto logp = log_softmax(policy.last_logits(pair.context));
  const double delta = (logp(pair.w_c) - ref_logp_c) - (logp(pair.w_r) - ref_logp_r);
  if (delta_out) *delta_out = delta;
  // dL/d(delta) = -beta * sigmoid(-beta * delta); d(delta)/d(logits) = e_c - e_r.
  const double dl = -beta * sigmoid(-beta * delta);
  std::vector<TokenId> seq = pair.context;
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  Matrix dlogits = Matrix::Zero(static_cast<Eigen::Index>(seq.size()), static_cast<Eigen::Index>(policy.vocab().size()));
  const auto row = static_cast<Eigen::Index>(pair.context.size()) - 1;
  dlogits(row, pair.w_c) += dl;
  dlogits(row, pair.w_r) -= dl;
  return policy.parameter_gradient(seq, dlogits);
}

TtpoLog ttpo_train(ToyTransformer& policy, const LanguageModel& reference, const std::vector<PreferencePair>& pairs,
                   const TtpoConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw ValidationError("TTPO training needs at least one preference pair");
  if (policy.vocab().pieces() != reference.vocab().pieces()) {
    throw ValidationError("policy and reference vocabularies differ");
  }
  std::vector<std::pair<double, double>> ref_logps;
  ref_logps.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.w_c == p.w_r) throw ValidationError("preference pair for " + p.prompt_id + " has w_c == w_r");
    const auto d = reference.next_distribution(p.context);
    ref_logps.emplace_back(d.log_prob(p.w_c), d.log_prob(p.w_r));
  }

  TtpoLog log;
  AdamState adam;
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      Rng rng(derive_seed(cfg.seed, "ttpo-epoch-" + std::to_string(epoch)));
      rng.shuffle(order);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Vector grad = Vector::Zero(static_cast<Eigen::Index>(policy.parameter_count()));
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        double delta = 0.0;
        grad += ttpo_gradient(policy, ref_logps[i].first, ref_logps[i].second, pairs[i], cfg.beta, {}, &delta);
        const double loss = ttpo_loss(delta, cfg.beta);
        log.steps.push_back({epoch, i, delta, loss});
        epoch_loss += loss;
      }
      grad /= static_cast<double>(end - start);
      policy.adam_step(grad, cfg.learning_rate, adam);
    }
    log.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));
  }
  return log;
}

SharpeningReport sharpening_report(const LanguageModel& before, const LanguageModel& after,
                                   const std::vector<std::vector<TokenId>>& pivot_contexts) {
  if (pivot_contexts.empty()) throw ValidationError("sharpening report needs at least one pivot context");
  SharpeningReport rep;
  for (const auto& ctx : pivot_contexts) {
    const auto b = before.next_distribution(ctx);
    const auto a = after.next_distribution(ctx);
    SharpeningRow row{b.probs.maxCoeff(), b.entropy, a.probs.maxCoeff(), a.entropy};
    rep.mean_top1_delta += row.top1_after - row.top1_before;
    rep.mean_entropy_delta += row.entropy_after - row.entropy_before;
    rep.rows.push_back(row);
  }
  rep.mean_top1_delta /= static_cast<double>(rep.rows.size());
  rep.mean_entropy_delta /= static_cast<double>(rep.rows.size());
  return rep;
}

std::string pair_to_json(const PreferencePair& p) {
  Json j = {{"context_tokens", p.context},
            {"w_c", p.w_c},
            {"w_r", p.w_r},
            {"provenance",
             {{"prompt_id", p.prompt_id},
              {"pivot_pos", p.pivot_pos},
              {"chosen_phrase", p.chosen_phrase},
              {"rejected_phrase", p.rejected_phrase},
              {"chosen_prior", p.chosen_prior},
              {"rejected_prior", p.rejected_prior}}}};
  return j.dump();
}

PreferencePair pair_from_json(const std::string& line) {
  PreferencePair p;
  try {
    const Json j = Json::parse(line);
    p.context = j.at("context_tokens").get<std::vector<TokenId>>();
    p.w_c = j.at("w_c").get<TokenId>();
    p.w_r = j.at("w_r").get<TokenId>();
    const auto& prov = j.at("provenance");
    p.prompt_id = prov.value("prompt_id", std::string());
    p.pivot_pos = prov.value("pivot_pos", std::size_t{0});
    p.chosen_phrase = prov.value("chosen_phrase", std::string());
    p.rejected_phrase = prov.value("rejected_phrase", std::string());
    p.chosen_prior = prov.value("chosen_prior", 0.0);
    p.rejected_prior = prov.value("rejected_prior", 0.0);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed preference pair: ") + e.what());
  }
  if (p.context.empty()) throw ValidationError("preference pair has an empty context");
  if (p.w_c == p.w_r) throw ValidationError("preference pair has w_c == w_r");
  return p;
}

void write_pairs(const std::string& path, const std::vector<PreferencePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write pairs: " + path);
  for (const auto& p : pairs) out << pair_to_json(p) << '\n';
}

std::vector<PreferencePair> read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read pairs: " + path);
  std::vector<PreferencePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(pair_from_json(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pivot
