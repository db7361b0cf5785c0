#include "pivot/harness.hpp"

#include "pivot/answer.hpp"
#include "pivot/error.hpp"
#include "pivot/perturb.hpp"
#include "pivot/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#ifndef PIVOT_DATA_DIR
#define PIVOT_DATA_DIR "data"
#endif

namespace pivot {
namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(std::string("cannot read ") + what + ": " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// First present key among `keys`, as text. Booleans and numbers are stringified.
std::optional<std::string> field(const Json& row, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (!row.contains(k) || row[k].is_null()) continue;
    const auto& v = row[k];
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "True" : "False";
    if (v.is_number()) return v.dump();
    if (v.is_array()) return v.dump();
    throw ValidationError(std::string("field '") + k + "' has an unsupported type");
  }
  return std::nullopt;
}

std::optional<std::vector<std::string>> string_list(const Json& row, const char* key) {
  if (!row.contains(key) || !row[key].is_array()) return std::nullopt;
  std::vector<std::string> out;
  for (const auto& v : row[key]) {
    if (!v.is_string()) throw ValidationError(std::string("field '") + key + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string zebra_choices(const std::vector<std::string>& xs) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out += "\"" + xs[i] + "\"";
    out += i + 1 < xs.size() ? ",\n" : "\n";
  }
  return out + "]";
}

std::string lettered_choices(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += '\n';
    out += "(";
    out += static_cast<char>('A' + static_cast<int>(i % 26));
    out += ") " + xs[i];
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Maps binary labels onto the template's option letters.
std::string binary_option(const std::string& label, const std::string& a_label, const std::string& b_label) {
  const std::string l = lower(label);
  if (l == lower(a_label)) return "A";
  if (l == lower(b_label)) return "B";
  return label;
}

Task parse_row(const Json& row, const std::string& schema, std::size_t line) {
  if (!row.is_object()) throw ValidationError("row is not a JSON object");
  Task t;
  t.template_id = schema;
  t.id = field(row, {"id"}).value_or(schema + "-" + std::to_string(line));
  auto require = [&](const char* name, std::initializer_list<const char*> keys) {
    auto v = field(row, keys);
    if (!v) throw ValidationError(std::string("missing field '") + name + "'");
    t.fields[name] = *v;
  };
  std::optional<std::string> gold;
  if (schema == "toy-grammar") {
    require("question", {"question", "prompt"});
    gold = field(row, {"gold_answer", "answer"});
  } else if (schema == "zebralogic") {
    require("puzzle", {"puzzle"});
    require("question", {"question"});
    if (auto xs = string_list(row, "choices")) {
      t.fields["choices"] = zebra_choices(*xs);
    } else {
      require("choices", {"choices"});
    }
    gold = field(row, {"gold_answer", "answer"});
  } else if (schema == "bbh") {
    t.fields["context"] = field(row, {"context"}).value_or("");
    require("question", {"question", "input"});
    if (auto xs = string_list(row, "choices")) {
      t.fields["choices"] = lettered_choices(*xs);
    } else {
      require("choices", {"choices", "options"});
    }
    gold = field(row, {"gold_answer", "target", "answer"});
  } else if (schema == "rulebert" || schema == "prontoqa") {
    require("context", {"context"});
    require("question", {"question"});
    gold = field(row, {"gold_answer", "answer", "label"});
    if (gold) gold = binary_option(*gold, "True", "False");
  } else if (schema == "logiqa2") {
    require("hypothesis", {"hypothesis", "premise"});
    require("question", {"question"});
    gold = field(row, {"gold_answer", "answer", "label"});
    if (gold) gold = binary_option(*gold, "not-entailment", "entailment");
  } else {
    throw ValidationError("unknown benchmark schema '" + schema + "'");
  }
  if (!gold || gold->find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ValidationError("missing gold_answer");
  }
  t.gold_answer = *gold;
  return t;
}

std::string utc_stamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

}  // namespace

const std::vector<std::string>& benchmark_schemas() {
  static const std::vector<std::string> s{"zebralogic", "bbh", "rulebert", "logiqa2", "prontoqa", "toy-grammar"};
  return s;
}

IngestResult ingest_benchmark_text(const std::string& text, const std::string& schema) {
  const auto& known = benchmark_schemas();
  if (std::find(known.begin(), known.end(), schema) == known.end()) {
    throw ValidationError("unknown benchmark schema '" + schema + "'");
  }
  IngestResult out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.tasks.push_back(parse_row(Json::parse(line), schema, line_no));
    } catch (const Json::exception& e) {
      out.rejects.push_back({line_no, std::string("malformed JSON: ") + e.what()});
    } catch (const ValidationError& e) {
      out.rejects.push_back({line_no, e.what()});
    }
  }
  return out;
}

IngestResult ingest_benchmark(const std::string& path, const std::string& schema) {
  return ingest_benchmark_text(read_file(path, "benchmark file"), schema);
}

// ---------------------------------------------------------------------------

std::vector<std::string> PromptTemplate::placeholders() const {
  static const std::regex re(R"(\[([a-z_]+)\])");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
    const std::string name = (*it)[1];
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  return out;
}

PromptTemplate PromptTemplate::load(const std::string& path, std::string id) {
  return {std::move(id), read_file(path, "template")};
}

std::string data_directory() {
  if (const char* env = std::getenv("PIVOT_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return PIVOT_DATA_DIR;
}

PromptTemplate builtin_template(const std::string& id) {
  const fs::path path = fs::path(data_directory()) / "templates" / (id + ".txt");
  if (!fs::exists(path)) throw ValidationError("no template named '" + id + "' under " + path.parent_path().string());
  return PromptTemplate::load(path.string(), id);
}

std::string render_prompt(const PromptTemplate& tmpl, const Task& task, std::vector<std::string>* warnings) {
  static const std::regex re(R"(\[([a-z_]+)\])");
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(tmpl.text.begin(), tmpl.text.end(), re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const std::string name = m[1];
    const auto f = task.fields.find(name);
    if (f == task.fields.end()) {
      throw ValidationError("template '" + tmpl.id + "': unresolved placeholder [" + name + "] for task " + task.id);
    }
    if (f->second.empty() && warnings) warnings->push_back("task " + task.id + ": empty field [" + name + "]");
    out.append(tmpl.text, last, static_cast<std::size_t>(m.position(0)) - last);
    out += f->second;
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(tmpl.text, last, std::string::npos);
  return out;
}

TaskSplit split_tasks(const std::vector<Task>& tasks, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0 && train_fraction <= 1)) throw ValidationError("train fraction must lie in [0, 1]");
  std::vector<std::size_t> order(tasks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(tasks.size())));
  TaskSplit s;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? s.train : s.test).push_back(tasks[order[i]]);
  return s;
}

std::vector<Task> toy_grammar_tasks(const ToyGrammar& grammar) {
  std::vector<Task> out;
  for (const auto& p : grammar.prompts()) {
    out.push_back({p.id, "toy-grammar", {{"question", grammar.prompt_text(p)}}, grammar.gold(p)});
  }
  return out;
}

std::string tasks_to_jsonl(const std::vector<Task>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    Json j = {{"id", t.id}};
    for (const auto& [k, v] : t.fields) j[k] = v;
    j["gold_answer"] = t.gold_answer;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<PivotItem> toy_pivot_suite(const ToyGrammar& grammar, const Vocabulary& vocab, std::size_t n_distractors,
                                       std::uint64_t seed) {
  if (n_distractors < 1) throw ValidationError("pivot suite needs at least one distractor");
  std::vector<PivotItem> out;
  const auto& fillers = grammar.config().fillers;
  for (const auto& p : grammar.prompts()) {
    Rng rng(derive_seed(seed, "suite:" + p.id));
    PivotItem item;
    item.context.push_back(vocab.bos());
    for (const auto& t : vocab.tokenize(grammar.prompt_text(p))) item.context.push_back(t);
    for (const auto& w : grammar.pivot_prefix(p, fillers[rng.below(fillers.size())])) {
      item.context.push_back(*vocab.find_word(w));
    }
    item.gold = grammar.valid_connective(p);
    const auto noise = grammar.noise_connectives(p);
    for (std::size_t i : rng.sample_indices(noise.size(), n_distractors)) item.distractors.push_back(noise[i]);
    out.push_back(std::move(item));
  }
  return out;
}

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  ExperimentConfig c;
  c.steer.layer = -1;
  try {
    const Json j = Json::parse(text);
    c.method = j.value("method", c.method);
    c.benchmark = j.value("benchmark", c.benchmark);
    c.benchmark_path = j.value("benchmark_path", c.benchmark_path);
    c.template_id = j.value("template_id", c.template_id);
    c.seed = j.value("seed", c.seed);
    c.limit = j.value("limit", c.limit);
    c.decode.max_len = j.value("max_len", c.decode.max_len);
    c.decode.top_k = j.value("top_k", c.decode.top_k);
    if (j.contains("branch")) {
      const auto& b = j["branch"];
      c.branch.k = b.value("k", c.branch.k);
      c.branch.lookahead = b.value("lookahead", c.branch.lookahead);
      c.branch.eps = b.value("eps", c.branch.eps);
    }
    if (j.contains("steer")) {
      const auto& s = j["steer"];
      c.steer.alpha = s.value("alpha", c.steer.alpha);
      c.steer.layer = s.value("layer", c.steer.layer);
      c.steer.trigger = steering_trigger_from_string(s.value("trigger", std::string("always")));
      c.steering_vector_path = s.value("vector", c.steering_vector_path);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.run_name = j.value("run_name", c.run_name);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  const std::vector<std::string> methods{"greedy", "steer", "branch", "ttpo-model"};
  if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) {
    throw ValidationError("experiment config: unknown method '" + c.method + "'");
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_json_text(read_file(path, "experiment config"));
}

std::string ExperimentConfig::to_json_text() const {
  Json j = {{"method", method},
            {"benchmark", benchmark},
            {"benchmark_path", benchmark_path},
            {"template_id", template_id},
            {"seed", seed},
            {"limit", limit},
            {"max_len", decode.max_len},
            {"top_k", decode.top_k}};
  if (method == "branch") j["branch"] = {{"k", branch.k}, {"lookahead", branch.lookahead}, {"eps", branch.eps}};
  if (method == "steer") {
    j["steer"] = {{"alpha", steer.alpha},
                  {"layer", steer.layer},
                  {"trigger", std::string(to_string(steer.trigger))},
                  {"vector", steering_vector_path}};
  }
  return j.dump();
}

std::string ExperimentConfig::hash() const {
  return hex64(stable_hash(to_json_text()));
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg, const LanguageModel& model,
                                 const ConnectiveLexicon& lexicon) {
  IngestResult ingest;
  if (cfg.benchmark == "toy-grammar" && cfg.benchmark_path.empty()) {
    ingest.tasks = toy_grammar_tasks(ToyGrammar());
  } else {
    if (cfg.benchmark_path.empty()) throw ValidationError("experiment config: benchmark_path is required");
    ingest = ingest_benchmark(cfg.benchmark_path, cfg.benchmark);
  }
  if (cfg.limit > 0 && ingest.tasks.size() > cfg.limit) ingest.tasks.resize(cfg.limit);
  if (ingest.tasks.empty()) throw ValidationError("experiment has no valid tasks");
  const PromptTemplate tmpl = builtin_template(cfg.template_id.empty() ? cfg.benchmark : cfg.template_id);

  std::optional<SteeringVector> sv;
  SteeringConfig steer = cfg.steer;
  if (cfg.method == "steer") {
    if (cfg.steering_vector_path.empty()) throw ValidationError("steer runs need a steering vector path");
    sv = SteeringVector::load(cfg.steering_vector_path);
    if (steer.layer < 0) steer.layer = sv->layer;
  }

  const fs::path dir = fs::path(cfg.output_dir) / (cfg.run_name.empty() ? cfg.method + "-" + utc_stamp() : cfg.run_name);
  fs::create_directories(dir);

  ExperimentSummary sum;
  sum.run_dir = dir.string();
  sum.rejects = ingest.rejects.size();
  std::vector<GenerationTrace> traces;
  std::string interventions;
  std::size_t pivots = 0;
  std::size_t completion_tokens = 0;
  std::vector<std::string> warnings;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& task : ingest.tasks) {
    const auto prompt = model.encode_prompt(render_prompt(tmpl, task, &warnings));
    GenerationTrace trace;
    if (cfg.method == "branch") {
      auto r = branch_decode(model, prompt, lexicon, cfg.branch, cfg.decode, task.id, task.gold_answer);
      sum.forward_steps += r.total_forward_steps;
      pivots += r.log.size();
      for (const auto& p : r.log) {
        Json j = Json::parse(pivot_log_to_json(p));
        j["prompt_id"] = task.id;
        interventions += j.dump() + "\n";
      }
      trace = std::move(r.trace);
    } else if (cfg.method == "steer") {
      trace = steer_decode(model, prompt, *sv, steer, lexicon, cfg.decode, task.id, task.gold_answer);
      sum.forward_steps += trace.forward_steps;
    } else {
      trace = greedy_decode(model, prompt, lexicon, cfg.decode, task.id, task.gold_answer);
      sum.forward_steps += trace.forward_steps;
    }
    completion_tokens += trace.steps.size();
    sum.n_correct += trace_correct(trace) ? 1 : 0;
    traces.push_back(std::move(trace));
  }
  sum.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  sum.n_tasks = traces.size();
  sum.accuracy = static_cast<double>(sum.n_correct) / static_cast<double>(sum.n_tasks);

  write_traces((dir / "traces.jsonl").string(), traces, model.vocab());
  if (cfg.method == "branch") write_file(dir / "interventions.jsonl", interventions);
  if (!ingest.rejects.empty()) {
    std::string rej;
    for (const auto& r : ingest.rejects) rej += Json{{"line", r.line}, {"reason", r.reason}}.dump() + "\n";
    write_file(dir / "rejects.jsonl", rej);
  }

  Json hyper = Json::object();
  if (cfg.method == "branch") hyper = {{"k", cfg.branch.k}, {"lookahead", cfg.branch.lookahead}};
  if (cfg.method == "steer") hyper = {{"alpha", steer.alpha}, {"layer", steer.layer}};
  const std::string model_id = model.model_id();

  Json manifest = {{"tool_version", kToolVersion},
                   {"config", Json::parse(cfg.to_json_text())},
                   {"config_hash", cfg.hash()},
                   {"model_id", model_id},
                   {"lexicon_hash", hex64(stable_hash(lexicon.serialize()))},
                   {"template_hash", hex64(stable_hash(tmpl.text))},
                   {"n_tasks", sum.n_tasks},
                   {"rejects", sum.rejects}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  Json metrics = {{"method", cfg.method},
                  {"benchmark", cfg.benchmark},
                  {"model_id", model_id},
                  {"n_tasks", sum.n_tasks},
                  {"n_correct", sum.n_correct},
                  {"accuracy", sum.accuracy},
                  {"forward_steps", sum.forward_steps},
                  {"completion_tokens", completion_tokens},
                  {"warnings", warnings.size()}};
  if (cfg.method == "branch") metrics["pivots"] = pivots;
  write_file(dir / "metrics.json", metrics.dump(2) + "\n");

  Json eff = {{"method", cfg.method},
              {"model_id", model_id},
              {"benchmark", cfg.benchmark},
              {"forward_steps", sum.forward_steps},
              {"hyperparams", hyper}};
  write_file(dir / "efficiency.json", eff.dump(2) + "\n");
  write_file(dir / "timing.json", Json{{"wall_seconds", sum.wall_seconds}}.dump(2) + "\n");
  return sum;
}

std::vector<EfficiencyRecord> efficiency_report(const std::vector<std::string>& run_dirs) {
  std::vector<EfficiencyRecord> recs;
  for (const auto& d : run_dirs) {
    Json eff;
    try {
      eff = Json::parse(read_file((fs::path(d) / "efficiency.json").string(), "efficiency record"));
    } catch (const Json::exception& e) {
      throw ValidationError(d + "/efficiency.json: " + e.what());
    }
    EfficiencyRecord r;
    r.method = eff.at("method").get<std::string>();
    r.model_id = eff.at("model_id").get<std::string>();
    r.benchmark = eff.at("benchmark").get<std::string>();
    r.forward_steps = eff.at("forward_steps").get<std::size_t>();
    r.hyperparams = eff.value("hyperparams", Json::object()).dump();
    const fs::path timing = fs::path(d) / "timing.json";
    if (fs::exists(timing)) r.wall_seconds = Json::parse(read_file(timing.string(), "timing")).value("wall_seconds", 0.0);
    recs.push_back(std::move(r));
  }
  for (auto& r : recs) {
    const EfficiencyRecord* base = nullptr;
    for (const auto& g : recs) {
      if (g.method == "greedy" && g.model_id == r.model_id && g.benchmark == r.benchmark) {
        base = &g;
        break;
      }
    }
    if (base == nullptr) {
      throw ValidationError("no greedy baseline for model " + r.model_id + " on " + r.benchmark);
    }
    if (base->forward_steps == 0) throw ValidationError("greedy baseline has zero forward steps");
    if (&r == base) {
      r.token_cost_x = 1.0;
      r.time_x = 1.0;
      continue;
    }
    r.token_cost_x = static_cast<double>(r.forward_steps) / static_cast<double>(base->forward_steps);
    if (base->wall_seconds > 0) r.time_x = r.wall_seconds / base->wall_seconds;
  }
  return recs;
}

std::string efficiency_csv(const std::vector<EfficiencyRecord>& records) {
  std::ostringstream os;
  os << "method,model_id,benchmark,forward_steps,token_cost_x,time_x,hyperparams\n";
  for (const auto& r : records) {
    std::string hp = r.hyperparams;
    std::replace(hp.begin(), hp.end(), ',', ';');
    os << r.method << ',' << r.model_id << ',' << r.benchmark << ',' << r.forward_steps << ','
       << std::fixed << std::setprecision(4) << r.token_cost_x << ',';
    if (r.time_x) os << *r.time_x;
    os << ',' << hp << '\n';
  }
  return os.str();
}

}  // namespace pivot
