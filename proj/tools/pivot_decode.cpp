#include "pivot/bridge.hpp"
#include "pivot/diagnostics.hpp"
#include "pivot/error.hpp"
#include "pivot/harness.hpp"
#include "pivot/perturb.hpp"
#include "pivot/pipeline.hpp"
#include "pivot/steering.hpp"
#include "pivot/toy_model.hpp"
#include "pivot/ttpo.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#ifndef PIVOT_DEFAULT_MODEL
#define PIVOT_DEFAULT_MODEL "toy_model.json"
#endif

namespace {

using Json = nlohmann::json;
using namespace pivot;

struct Globals {
  std::string model_path;
  std::string endpoint;
  std::string lexicon_path;
  std::uint64_t seed = 7;
  std::size_t max_len = 64;
};

std::string default_model_path() {
  if (const char* v = std::getenv("PIVOT_TOY_MODEL"); v != nullptr && *v != '\0') return v;
  return PIVOT_DEFAULT_MODEL;
}

class Backend {
 public:
  explicit Backend(const Globals& g) {
    if (!g.endpoint.empty() || (g.model_path.empty() && std::getenv("PIVOT_BRIDGE_ENDPOINT") != nullptr)) {
      remote_ = BridgeModel::connect(BridgeEndpoint::from_env(g.endpoint));
    } else {
      toy_ = std::make_unique<ToyTransformer>(ToyTransformer::load(g.model_path.empty() ? default_model_path() : g.model_path));
    }
  }
  const LanguageModel& model() const {
    if (toy_) return *toy_;
    return *remote_;
  }
  const ToyTransformer& toy(const char* what) const {
    if (!toy_) throw ValidationError(std::string(what) + " requires the toy backend (--model)");
    return *toy_;
  }

 private:
  std::unique_ptr<ToyTransformer> toy_;
  std::unique_ptr<BridgeModel> remote_;
};

ConnectiveLexicon load_lexicon(const Globals& g) {
  return g.lexicon_path.empty() ? ConnectiveLexicon::builtin() : ConnectiveLexicon::load(g.lexicon_path);
}

DecodeOptions decode_options(const Globals& g) {
  DecodeOptions o;
  o.max_len = g.max_len;
  return o;
}

void emit(const Json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw ValidationError("cannot write " + out);
  f << j.dump(2) << '\n';
}

// Greedy traces for the toy-grammar tasks, or the traces stored in `path`.
std::vector<GenerationTrace> load_or_decode(const std::string& path, const Backend& be, const ConnectiveLexicon& lex,
                                            const Globals& g) {
  if (!path.empty()) return read_traces(path);
  const auto& model = be.model();
  const PromptTemplate tmpl = builtin_template("toy-grammar");
  std::vector<GenerationTrace> out;
  for (const auto& t : toy_grammar_tasks(ToyGrammar())) {
    out.push_back(greedy_decode(model, model.encode_prompt(render_prompt(tmpl, t)), lex, decode_options(g), t.id,
                                t.gold_answer));
  }
  return out;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diagnose and control reasoning at logical-connective pivots", "pivot-decode"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Globals g;
  app.add_option("--model", g.model_path, "Toy model JSON (default: the model trained at build time)");
  app.add_option("--endpoint", g.endpoint, "Bridge server URL (env PIVOT_BRIDGE_ENDPOINT)");
  app.add_option("--lexicon", g.lexicon_path, "Connective lexicon file (default: built-in)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--max-len", g.max_len, "Maximum completion length");

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Train the toy transformer from a spec");
  std::string spec_path = data_directory() + "/toy_model_spec.json";
  std::string train_out, loss_out;
  train->add_option("--spec", spec_path, "Model/corpus spec JSON");
  train->add_option("--out", train_out, "Output model JSON")->required();
  train->add_option("--loss-log", loss_out, "Write per-step training loss here");

  // toy-tasks
  auto* toy_tasks = app.add_subcommand("toy-tasks", "Write the toy-grammar benchmark as JSONL");
  std::string tasks_out;
  toy_tasks->add_option("--out", tasks_out, "Output JSONL")->required();

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "Connective entropy diagnostics over traces");
  std::string diag_traces, diag_out, tagger_path;
  double tau = 1.0;
  std::vector<double> quantiles{0.8, 0.9, 0.95};
  std::vector<double> cat_taus{0.5, 1.0, 1.5};
  std::size_t presence_k = 5;
  diagnose->add_option("--traces", diag_traces, "traces.jsonl (default: greedy toy-grammar traces)");
  diagnose->add_option("--tau", tau, "Entropy threshold (nats)");
  diagnose->add_option("--quantiles", quantiles, "Quantile levels for enrichment");
  diagnose->add_option("--category-taus", cat_taus, "Thresholds for the category sweep");
  diagnose->add_option("--categories", tagger_path, "Category word-list JSON");
  diagnose->add_option("--presence-k", presence_k, "K for top-K connective presence");
  diagnose->add_option("--out", diag_out, "Output JSON (default: stdout)");

  // perturb
  auto* perturb = app.add_subcommand("perturb", "Single-connective replacement at a seeded pivot");
  std::string pert_traces, pert_out, pert_results;
  std::string policy_name = "random-any";
  bool study = false;
  perturb->add_option("--traces", pert_traces, "traces.jsonl (default: greedy toy-grammar traces)");
  perturb->add_option("--policy", policy_name, "random-any | same-class | cross-class | non-connective-random");
  perturb->add_flag("--study", study, "Also run the controlled replacement study");
  perturb->add_option("--results", pert_results, "Per-trace results JSONL");
  perturb->add_option("--out", pert_out, "Summary JSON (default: stdout)");

  // shared experiment options
  ExperimentConfig exp;
  auto add_experiment_options = [&exp](CLI::App* sub) {
    sub->add_option("--benchmark", exp.benchmark, "Benchmark schema");
    sub->add_option("--benchmark-path", exp.benchmark_path, "Benchmark JSONL");
    sub->add_option("--template", exp.template_id, "Template id (default: the benchmark's)");
    sub->add_option("--limit", exp.limit, "Use only the first N tasks");
    sub->add_option("--out-dir", exp.output_dir, "Parent directory of run directories");
    sub->add_option("--run-name", exp.run_name, "Run directory name (default: method-timestamp)");
  };

  // branch
  auto* branch = app.add_subcommand("branch", "Decode with lookahead branching at connective pivots");
  add_experiment_options(branch);
  branch->add_option("--k", exp.branch.k, "Top-K candidates inspected per step");
  branch->add_option("--lookahead", exp.branch.lookahead, "Lookahead length L");
  branch->add_option("--eps", exp.branch.eps, "z-score epsilon");

  // steer
  auto* steer = app.add_subcommand("steer", "Decode with a gradient steering vector");
  add_experiment_options(steer);
  std::string vector_path;
  std::string trigger_name = "at-connective";
  int steer_layer = -1;
  steer->add_option("--vector", vector_path, "Steering vector JSON (default: extract from the toy pivot suite)");
  steer->add_option("--alpha", exp.steer.alpha, "Steering strength");
  steer->add_option("--layer", steer_layer, "Layer (default: penultimate)");
  steer->add_option("--trigger", trigger_name, "always | at-connective");

  // ttpo-build
  auto* ttpo_build = app.add_subcommand("ttpo-build", "Mine pivot preference pairs");
  std::string pairs_out, build_log_out;
  std::size_t n_alt = 4;
  ttpo_build->add_option("--out", pairs_out, "Pairs JSONL")->required();
  ttpo_build->add_option("--alternatives", n_alt, "Sampled alternative connectives per pivot");
  ttpo_build->add_option("--log", build_log_out, "Per-prompt build log JSONL");

  // ttpo-train
  auto* ttpo_train_cmd = app.add_subcommand("ttpo-train", "Train the toy model on preference pairs");
  std::string pairs_in, policy_out, ttpo_report;
  TtpoConfig tcfg;
  ttpo_train_cmd->add_option("--pairs", pairs_in, "Pairs JSONL")->required();
  ttpo_train_cmd->add_option("--out", policy_out, "Trained model JSON")->required();
  ttpo_train_cmd->add_option("--beta", tcfg.beta, "Preference temperature");
  ttpo_train_cmd->add_option("--epochs", tcfg.epochs, "Epochs");
  ttpo_train_cmd->add_option("--batch-size", tcfg.batch_size, "Pairs per update");
  ttpo_train_cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate");
  ttpo_train_cmd->add_option("--report", ttpo_report, "Training report JSON (default: stdout)");

  // run
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  std::string config_path;
  run->add_option("config", config_path, "Experiment config JSON")->required();

  // report
  auto* report = app.add_subcommand("report", "Efficiency table over run directories");
  std::vector<std::string> run_dirs;
  std::string csv_out;
  report->add_option("runs", run_dirs, "Run directories")->required();
  report->add_option("--csv", csv_out, "Write CSV here (default: stdout)");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Full toy pipeline: diagnose, perturb, branch, steer, ttpo");
  std::string pipe_out = "pipeline";
  ToyPipelineConfig pcfg;
  pipeline->add_option("--out-dir", pipe_out, "Output directory");
  pipeline->add_option("--ttpo-lr", pcfg.ttpo.learning_rate, "TTPO learning rate");
  pipeline->add_option("--alpha", pcfg.steer_alpha, "Steering strength");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      const auto spec = ToyModelSpec::load(spec_path);
      std::vector<double> loss;
      const auto model = ToyTransformer::train_from_spec(spec, &loss);
      model.save(train_out);
      if (!loss_out.empty()) {
        std::ofstream f(loss_out);
        for (double l : loss) f << l << '\n';
      }
      std::cout << "trained " << model.model_id() << " final loss " << loss.back() << '\n';
      return 0;
    }
    if (toy_tasks->parsed()) {
      std::ofstream f(tasks_out);
      if (!f) throw ValidationError("cannot write " + tasks_out);
      f << tasks_to_jsonl(toy_grammar_tasks(ToyGrammar()));
      return 0;
    }
    if (report->parsed()) {
      const auto csv = efficiency_csv(efficiency_report(run_dirs));
      if (csv_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream(csv_out) << csv;
      }
      return 0;
    }

    const ConnectiveLexicon lex = load_lexicon(g);
    if (run->parsed()) {
      const auto cfg = ExperimentConfig::load(config_path);
      const Backend be(g);
      const auto s = run_experiment(cfg, be.model(), lex);
      std::cout << s.run_dir << " accuracy " << s.accuracy << " forward_steps " << s.forward_steps << '\n';
      return 0;
    }

    const Backend be(g);
    const LanguageModel& model = be.model();

    if (diagnose->parsed()) {
      const auto traces = load_or_decode(diag_traces, be, lex, g);
      const CategoryTagger tagger = tagger_path.empty() ? CategoryTagger() : CategoryTagger::load(tagger_path);
      Json j = {{"n_traces", traces.size()}, {"tau", tau}};
      j["high_entropy_rate"] = high_entropy_rate(traces, lex, tau);
      j["connective_density"] = connective_density(traces, lex);
      j["topk_connective_presence"] = topk_connective_presence(traces, lex, presence_k, tau);
      Json enr = Json::array();
      for (double q : quantiles) {
        const auto r = quantile_enrichment(traces, lex, q);
        enr.push_back({{"q", q}, {"threshold", r.threshold}, {"base_pct", r.base_pct}, {"tail_pct", r.tail_pct},
                       {"enrichment", r.enrichment}});
      }
      j["enrichment"] = enr;
      const auto sweep = category_rhe_sweep(traces, tagger, lex, cat_taus);
      Json cats = Json::object();
      for (std::size_t c = 0; c < kTokenCategories.size(); ++c) {
        Json rates = Json::array();
        for (const auto& r : sweep.rates[c]) rates.push_back(optional_json(r));
        cats[std::string(to_string(kTokenCategories[c]))] = {{"count", sweep.counts[c]}, {"rates", rates}};
      }
      j["category_sweep"] = {{"taus", cat_taus}, {"categories", cats}};
      emit(j, diag_out);
      return 0;
    }

    if (perturb->parsed()) {
      const auto policy = replacement_policy_from_string(policy_name);
      const auto traces = load_or_decode(pert_traces, be, lex, g);
      std::vector<PerturbationResult> results;
      for (const auto& t : traces) {
        std::optional<std::size_t> pivot = choose_pivot(t, lex, g.seed);
        if (!pivot) continue;
        results.push_back(perturb_at_pivot(model, t, *pivot, policy, lex, g.seed, decode_options(g)));
      }
      if (!pert_results.empty()) {
        std::ofstream f(pert_results);
        for (const auto& r : results) f << perturbation_to_json(r) << '\n';
      }
      const auto m = flip_matrix(results);
      const auto cond = conditional_rates(m);
      Json j = {{"policy", policy_name},
                {"n", results.size()},
                {"flip_counts", m.counts},
                {"flip_rates_pct", m.rates()},
                {"fragility_pct", optional_json(cond.fragility)},
                {"repair_pct", optional_json(cond.repair)}};
      if (study) {
        Json s = Json::array();
        for (const auto& p : controlled_replacement_study(model, traces, lex, g.seed, decode_options(g))) {
          s.push_back({{"policy", std::string(to_string(p.policy))}, {"n", p.n}, {"c_to_i", p.c_to_i},
                       {"rate_pct", p.rate_pct}});
        }
        j["controlled_study"] = s;
      }
      emit(j, pert_out);
      return 0;
    }

    if (branch->parsed() || steer->parsed()) {
      exp.seed = g.seed;
      exp.decode = decode_options(g);
      if (branch->parsed()) {
        exp.method = "branch";
        exp.branch.validate();
      } else {
        exp.method = "steer";
        exp.steer.trigger = steering_trigger_from_string(trigger_name);
        exp.steer.layer = steer_layer < 0 ? model.penultimate_layer() : steer_layer;
        if (vector_path.empty()) {
          const auto& toy = be.toy("extracting a steering vector from the toy pivot suite");
          const auto suite = toy_pivot_suite(ToyGrammar(toy.spec().corpus), toy.vocab(), 3, g.seed);
          std::vector<SteeringSample> samples;
          for (const auto& item : suite) samples.push_back({item.context, toy.vocab().tokenize(item.gold).front()});
          std::vector<std::string> warnings;
          const auto sv = extract_steering_vector(model, samples, exp.steer.layer, &warnings);
          for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
          std::filesystem::create_directories(exp.output_dir);
          vector_path = (std::filesystem::path(exp.output_dir) / "steering_vector.json").string();
          sv.save(vector_path);
        }
        exp.steering_vector_path = vector_path;
      }
      const auto s = run_experiment(exp, model, lex);
      std::cout << s.run_dir << " accuracy " << s.accuracy << " forward_steps " << s.forward_steps << '\n';
      return 0;
    }

    if (ttpo_build->parsed()) {
      const PromptTemplate tmpl = builtin_template("toy-grammar");
      std::vector<PromptTask> tasks;
      for (const auto& t : toy_grammar_tasks(ToyGrammar())) {
        tasks.push_back({t.id, model.encode_prompt(render_prompt(tmpl, t)), t.gold_answer});
      }
      std::vector<PairBuildLog> log;
      const auto pairs = build_preference_pairs(model, tasks, lex, n_alt, g.seed, decode_options(g), &log);
      write_pairs(pairs_out, pairs);
      if (!build_log_out.empty()) {
        std::ofstream f(build_log_out);
        for (const auto& e : log) {
          f << Json{{"prompt_id", e.prompt_id}, {"status", e.status}, {"pivot_pos", e.pivot_pos},
                    {"candidates", e.candidates}}.dump()
            << '\n';
        }
      }
      std::cout << "pairs " << pairs.size() << " of " << tasks.size() << " prompts\n";
      return 0;
    }

    if (ttpo_train_cmd->parsed()) {
      const auto& reference = be.toy("ttpo-train");
      tcfg.seed = g.seed;
      const auto pairs = read_pairs(pairs_in);
      ToyTransformer policy = reference;
      const auto log = ttpo_train(policy, reference, pairs, tcfg);
      policy.save(policy_out);
      std::size_t positive = 0;
      std::vector<std::vector<TokenId>> contexts;
      for (const auto& p : pairs) {
        positive += ttpo_delta(policy, reference, p.context, p.w_c, p.w_r) > 0 ? 1 : 0;
        contexts.push_back(p.context);
      }
      const auto sharp = sharpening_report(reference, policy, contexts);
      emit({{"pairs", pairs.size()},
            {"epoch_mean_loss", log.epoch_mean_loss},
            {"delta_positive_fraction", static_cast<double>(positive) / static_cast<double>(pairs.size())},
            {"mean_top1_delta", sharp.mean_top1_delta},
            {"mean_entropy_delta", sharp.mean_entropy_delta},
            {"model_id", policy.model_id()}},
           ttpo_report);
      return 0;
    }

    if (pipeline->parsed()) {
      pcfg.seed = g.seed;
      pcfg.ttpo.seed = g.seed;
      pcfg.decode = decode_options(g);
      const auto r = run_toy_pipeline(be.toy("pipeline"), lex, pcfg, pipe_out);
      for (const auto& f : r.files) std::cout << f << '\n';
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
