#include "pivot/pipeline.hpp"

#include "pivot/diagnostics.hpp"
#include "pivot/error.hpp"
#include "pivot/harness.hpp"
#include "pivot/perturb.hpp"
#include "pivot/rng.hpp"
#include "pivot/steering.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>

namespace pivot {
namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

std::string write_json(const fs::path& dir, const std::string& name, const Json& j) {
  const fs::path p = dir / name;
  std::ofstream out(p);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << j.dump(2) << '\n';
  return p.string();
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

double accuracy(const std::vector<GenerationTrace>& traces) {
  std::size_t ok = 0;
  for (const auto& t : traces) ok += trace_correct(t) ? 1 : 0;
  return traces.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(traces.size());
}

Json diagnose_json(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon,
                   const ToyPipelineConfig& cfg) {
  Json j = {{"n_traces", traces.size()}, {"accuracy", accuracy(traces)}, {"tau", cfg.tau}};
  j["high_entropy_rate"] = high_entropy_rate(traces, lexicon, cfg.tau);
  j["connective_density"] = connective_density(traces, lexicon);
  j["topk_connective_presence"] = topk_connective_presence(traces, lexicon, 5, cfg.tau);
  Json enr = Json::array();
  for (double q : cfg.quantiles) {
    const auto r = quantile_enrichment(traces, lexicon, q);
    enr.push_back({{"q", q},
                   {"threshold", r.threshold},
                   {"base_pct", r.base_pct},
                   {"tail_pct", r.tail_pct},
                   {"enrichment", r.enrichment}});
  }
  j["enrichment"] = enr;
  const auto sweep = category_rhe_sweep(traces, CategoryTagger(), lexicon, cfg.category_taus);
  Json cats = Json::object();
  for (std::size_t c = 0; c < kTokenCategories.size(); ++c) {
    Json rates = Json::array();
    for (const auto& r : sweep.rates[c]) rates.push_back(optional_json(r));
    cats[std::string(to_string(kTokenCategories[c]))] = {{"count", sweep.counts[c]}, {"rates", rates}};
  }
  j["category_sweep"] = {{"taus", cfg.category_taus}, {"categories", cats}};
  return j;
}

Json perturb_json(const ToyTransformer& model, const std::vector<GenerationTrace>& traces,
                  const ConnectiveLexicon& lexicon, const ToyPipelineConfig& cfg) {
  std::vector<PerturbationResult> results;
  for (const auto& t : traces) {
    const auto pivot = choose_pivot(t, lexicon, cfg.seed);
    if (!pivot) continue;
    results.push_back(perturb_at_pivot(model, t, *pivot, ReplacementPolicy::random_any, lexicon, cfg.seed, cfg.decode));
  }
  const auto m = flip_matrix(results);
  const auto rates = m.rates();
  const auto cond = conditional_rates(m);
  Json j = {{"n", results.size()},
            {"flip_counts", m.counts},
            {"flip_rates_pct", rates},
            {"fragility_pct", optional_json(cond.fragility)},
            {"repair_pct", optional_json(cond.repair)}};
  Json study = Json::array();
  for (const auto& p : controlled_replacement_study(model, traces, lexicon, cfg.seed, cfg.decode)) {
    study.push_back({{"policy", std::string(to_string(p.policy))}, {"n", p.n}, {"c_to_i", p.c_to_i}, {"rate_pct", p.rate_pct}});
  }
  j["controlled_study"] = study;
  Json shifts = Json::array();
  for (const auto& r : relation_shift_repair(results)) {
    shifts.push_back({{"source", std::string(to_string(r.source))},
                      {"target", std::string(to_string(r.target))},
                      {"i_to_i", r.i_to_i},
                      {"i_to_c", r.i_to_c},
                      {"repair_pct", optional_json(r.repair_pct)}});
  }
  j["relation_shift_repair"] = shifts;
  return j;
}

}  // namespace

std::vector<PromptTask> toy_prompt_tasks(const ToyTransformer& model) {
  const ToyGrammar grammar(model.spec().corpus);
  const PromptTemplate tmpl = builtin_template("toy-grammar");
  std::vector<PromptTask> out;
  for (const auto& task : toy_grammar_tasks(grammar)) {
    out.push_back({task.id, model.encode_prompt(render_prompt(tmpl, task)), task.gold_answer});
  }
  return out;
}

ToyPipelineResult run_toy_pipeline(const ToyTransformer& model, const ConnectiveLexicon& lexicon,
                                   const ToyPipelineConfig& cfg, const std::string& out_dir) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  ToyPipelineResult res;
  const auto tasks = toy_prompt_tasks(model);
  const ToyGrammar grammar(model.spec().corpus);

  // diagnose
  std::vector<GenerationTrace> traces;
  for (const auto& t : tasks) traces.push_back(greedy_decode(model, t.prompt, lexicon, cfg.decode, t.id, t.gold));
  res.greedy_accuracy = accuracy(traces);
  write_traces((dir / "traces.jsonl").string(), traces, model.vocab());
  res.files.push_back(write_json(dir, "diagnose.json", diagnose_json(traces, lexicon, cfg)));

  // perturb
  res.files.push_back(write_json(dir, "perturb.json", perturb_json(model, traces, lexicon, cfg)));

  // branch
  std::vector<GenerationTrace> branched;
  std::size_t branch_steps = 0, greedy_steps = 0, pivots = 0;
  for (const auto& t : traces) greedy_steps += t.forward_steps;
  for (const auto& t : tasks) {
    auto r = branch_decode(model, t.prompt, lexicon, cfg.branch, cfg.decode, t.id, t.gold);
    branch_steps += r.total_forward_steps;
    pivots += r.log.size();
    branched.push_back(std::move(r.trace));
  }
  res.branch_accuracy = accuracy(branched);
  const auto suite = toy_pivot_suite(grammar, model.vocab(), cfg.suite_distractors, cfg.seed);
  Json branch = {{"k", cfg.branch.k},
                 {"lookahead", cfg.branch.lookahead},
                 {"accuracy", res.branch_accuracy},
                 {"greedy_accuracy", res.greedy_accuracy},
                 {"pivots", pivots},
                 {"forward_steps", branch_steps},
                 {"greedy_forward_steps", greedy_steps},
                 {"token_cost_x", static_cast<double>(branch_steps) / static_cast<double>(greedy_steps)},
                 {"suite_size", suite.size()},
                 {"suite_match_rate", match_rate_eval(model, suite, lexicon, cfg.branch)}};
  res.files.push_back(write_json(dir, "branch.json", branch));

  // steer
  std::vector<SteeringSample> samples;
  {
    std::vector<std::size_t> order(suite.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "steer-split"));
    rng.shuffle(order);
    const auto n = static_cast<std::size_t>(cfg.steer_train_fraction * static_cast<double>(order.size()));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& item = suite[order[i]];
      samples.push_back({item.context, model.vocab().tokenize(item.gold).front()});
    }
  }
  const int layer = cfg.steer_layer < 0 ? model.penultimate_layer() : cfg.steer_layer;
  const auto sv = extract_steering_vector(model, samples, layer);
  std::vector<GenerationTrace> steered;
  SteeringConfig scfg{cfg.steer_alpha, layer, SteeringTrigger::at_connective};
  std::size_t intervened = 0;
  for (const auto& t : tasks) {
    steered.push_back(steer_decode(model, t.prompt, sv, scfg, lexicon, cfg.decode, t.id, t.gold));
    for (const auto& s : steered.back().steps) intervened += s.intervened ? 1 : 0;
  }
  res.steer_accuracy = accuracy(steered);
  Json steer = {{"layer", layer},
                {"alpha", cfg.steer_alpha},
                {"trigger", "at-connective"},
                {"n_samples", sv.n_samples},
                {"skipped", sv.skipped},
                {"vector_norm", sv.values.norm()},
                {"intervened_steps", intervened},
                {"accuracy", res.steer_accuracy},
                {"greedy_accuracy", res.greedy_accuracy}};
  res.files.push_back(write_json(dir, "steer.json", steer));

  // ttpo
  std::vector<PairBuildLog> build_log;
  const auto pairs = build_preference_pairs(model, tasks, lexicon, cfg.ttpo_alternatives, cfg.seed, cfg.decode, &build_log);
  write_pairs((dir / "pairs.jsonl").string(), pairs);
  ToyTransformer policy = model;
  const auto log = ttpo_train(policy, model, pairs, cfg.ttpo);
  std::size_t positive = 0;
  std::vector<std::vector<TokenId>> contexts;
  for (const auto& p : pairs) {
    positive += ttpo_delta(policy, model, p.context, p.w_c, p.w_r) > 0 ? 1 : 0;
    contexts.push_back(p.context);
  }
  const auto sharp = sharpening_report(model, policy, contexts);
  std::vector<GenerationTrace> tuned;
  for (const auto& t : tasks) tuned.push_back(greedy_decode(policy, t.prompt, lexicon, cfg.decode, t.id, t.gold));
  res.ttpo_accuracy = accuracy(tuned);
  Json ttpo = {{"pairs", pairs.size()},
               {"beta", cfg.ttpo.beta},
               {"epochs", cfg.ttpo.epochs},
               {"learning_rate", cfg.ttpo.learning_rate},
               {"epoch_mean_loss", log.epoch_mean_loss},
               {"delta_positive_fraction", pairs.empty() ? 0.0 : static_cast<double>(positive) / static_cast<double>(pairs.size())},
               {"mean_top1_delta", sharp.mean_top1_delta},
               {"mean_entropy_delta", sharp.mean_entropy_delta},
               {"accuracy", res.ttpo_accuracy},
               {"greedy_accuracy", res.greedy_accuracy},
               {"policy_model_id", policy.model_id()}};
  res.files.push_back(write_json(dir, "ttpo.json", ttpo));
  return res;
}

}  // namespace pivot
