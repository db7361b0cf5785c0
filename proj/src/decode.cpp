#include "pivot/decode.hpp"

#include "pivot/answer.hpp"
#include "pivot/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>

namespace pivot {

using Json = nlohmann::json;

std::string_view to_string(Termination t) {
  return t == Termination::eos ? "eos" : "max_len";
}

std::vector<TokenId> GenerationTrace::completion_tokens() const {
  std::vector<TokenId> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.token);
  return out;
}

std::vector<TokenId> GenerationTrace::context_before(std::size_t step) const {
  if (step > steps.size()) throw ValidationError("step index beyond trace length");
  std::vector<TokenId> out = prompt;
  for (std::size_t i = 0; i < step; ++i) out.push_back(steps[i].token);
  return out;
}

std::vector<ConnectiveMatch> GenerationTrace::connectives() const {
  std::vector<ConnectiveMatch> out;
  for (const auto& s : steps) {
    if (s.connective) out.push_back(*s.connective);
  }
  return out;
}

// ---------------------------------------------------------------------------

DecodeSession::DecodeSession(const LanguageModel& model, std::vector<TokenId> prompt,
                             const ConnectiveLexicon& lexicon, DecodeOptions options)
    : model_(&model), lexicon_(&lexicon), options_(std::move(options)), prompt_(std::move(prompt)) {
  if (options_.max_len == 0) throw ValidationError("max_len must be at least 1");
  if (options_.stop.empty()) options_.stop.push_back(model.vocab().eos());
  context_ = prompt_;
}

DecodeSession DecodeSession::resume(const LanguageModel& model, const GenerationTrace& trace, std::size_t step,
                                    const ConnectiveLexicon& lexicon, DecodeOptions options) {
  if (step > trace.steps.size()) throw ValidationError("resume point beyond trace length");
  DecodeSession s(model, trace.prompt, lexicon, std::move(options));
  for (std::size_t i = 0; i < step; ++i) {
    s.steps_.push_back(trace.steps[i]);
    s.steps_.back().connective.reset();
    s.steps_.back().at_first_step = false;
    s.context_.push_back(trace.steps[i].token);
  }
  return s;
}

bool DecodeSession::is_stop(TokenId t) const {
  return std::find(options_.stop.begin(), options_.stop.end(), t) != options_.stop.end();
}

VocabDistribution DecodeSession::distribution(std::span<const ResidualEdit> edits) {
  ++forward_steps_;
  return model_->next_distribution(context_, edits);
}

void DecodeSession::emit(TokenId token, const VocabDistribution& dist, bool intervened) {
  if (finished()) throw ValidationError("emit on a finished decode session");
  if (is_stop(token)) {
    termination_ = Termination::eos;
    return;
  }
  StepRecord r;
  r.token = token;
  r.piece = model_->vocab().piece(token);
  r.top_k = dist.top_k(options_.top_k);
  for (const auto& c : r.top_k) r.top_k_pieces.push_back(model_->vocab().piece(c.first));
  r.entropy = dist.entropy;
  r.intervened = intervened;
  steps_.push_back(std::move(r));
  context_.push_back(token);
  if (steps_.size() >= options_.max_len || context_.size() >= model_->context_limit()) {
    termination_ = Termination::max_len;
  }
}

TokenId DecodeSession::step_greedy(std::span<const ResidualEdit> edits) {
  const auto d = distribution(edits);
  const TokenId t = d.argmax();
  emit(t, d);
  return t;
}

void DecodeSession::force(std::span<const TokenId> tokens, const VocabDistribution& first, bool intervened) {
  for (std::size_t i = 0; i < tokens.size() && !finished(); ++i) {
    if (i == 0) {
      emit(tokens[i], first, intervened);
    } else {
      emit(tokens[i], distribution(), intervened);
    }
  }
}

void DecodeSession::run_greedy(std::span<const ResidualEdit> edits) {
  while (!finished()) step_greedy(edits);
}

GenerationTrace DecodeSession::finish(std::string prompt_id, std::string gold) {
  GenerationTrace t;
  t.prompt_id = std::move(prompt_id);
  t.gold = std::move(gold);
  t.prompt = prompt_;
  t.steps = std::move(steps_);
  t.terminated_by = termination_.value_or(Termination::max_len);
  t.forward_steps = forward_steps_;
  annotate_trace(t, model_->vocab(), *lexicon_);
  return t;
}

// ---------------------------------------------------------------------------

GenerationTrace greedy_decode(const LanguageModel& model, std::span<const TokenId> prompt,
                              const ConnectiveLexicon& lexicon, const DecodeOptions& options,
                              std::string prompt_id, std::string gold) {
  DecodeSession s(model, {prompt.begin(), prompt.end()}, lexicon, options);
  s.run_greedy();
  return s.finish(std::move(prompt_id), std::move(gold));
}

GenerationTrace force_and_continue(const LanguageModel& model, const GenerationTrace& trace, std::size_t step,
                                   std::span<const TokenId> replacement, const ConnectiveLexicon& lexicon,
                                   const DecodeOptions& options) {
  if (replacement.empty()) throw ValidationError("replacement phrase tokenizes to nothing");
  auto s = DecodeSession::resume(model, trace, step, lexicon, options);
  s.force(replacement, s.distribution());
  s.run_greedy();
  return s.finish(trace.prompt_id, trace.gold);
}

double sequence_logprob(const LanguageModel& model, std::span<const TokenId> prefix,
                        std::span<const TokenId> continuation) {
  if (continuation.empty()) throw ValidationError("sequence_logprob: empty continuation");
  std::vector<TokenId> ctx(prefix.begin(), prefix.end());
  double total = 0.0;
  for (TokenId y : continuation) {
    total += model.next_distribution(ctx).log_prob(y);
    ctx.push_back(y);
  }
  return total / static_cast<double>(continuation.size());
}

std::string completion_text(const GenerationTrace& trace, const Vocabulary& vocab) {
  return vocab.detokenize(trace.completion_tokens());
}

void annotate_trace(GenerationTrace& trace, const Vocabulary& vocab, const ConnectiveLexicon& lexicon) {
  std::vector<TokenId> all = trace.prompt;
  for (auto& s : trace.steps) {
    all.push_back(s.token);
    s.connective.reset();
    s.at_first_step = false;
  }
  const std::size_t offset = trace.prompt.size();
  const auto detok = [&vocab](int id) { return vocab.piece(id); };
  for (auto m : annotate_connectives(all, detok, lexicon, offset)) {
    m.end_position -= offset;
    auto& step = trace.steps[m.end_position];
    step.at_first_step = m.start_position() == 0;
    step.connective = std::move(m);
  }
  trace.answer = extract_boxed_answer(completion_text(trace, vocab));
}

// ---------------------------------------------------------------------------

std::string trace_to_json(const GenerationTrace& trace, const Vocabulary& vocab) {
  Json steps = Json::array();
  for (const auto& s : trace.steps) {
    Json top = Json::array();
    Json top_ids = Json::array();
    for (std::size_t k = 0; k < s.top_k.size(); ++k) {
      const auto& [id, p] = s.top_k[k];
      top.push_back(Json::array({k < s.top_k_pieces.size() ? s.top_k_pieces[k] : vocab.piece(id), p}));
      top_ids.push_back(id);
    }
    Json j = {{"token", s.piece}, {"token_id", s.token}, {"top_k", top}, {"top_k_ids", top_ids},
              {"entropy", s.entropy}};
    if (s.connective) {
      j["connective"] = {{"surface", s.connective->phrase.surface},
                         {"class", std::string(to_string(s.connective->phrase.relation))},
                         {"span", s.connective->token_span}};
    } else {
      j["connective"] = nullptr;
    }
    if (s.at_first_step) j["at_first_step"] = true;
    if (!s.category.empty()) j["category"] = s.category;
    if (s.intervened) j["intervened"] = true;
    steps.push_back(std::move(j));
  }
  Json out = {{"prompt_id", trace.prompt_id},
              {"prompt_tokens", trace.prompt},
              {"gold", trace.gold},
              {"steps", steps},
              {"terminated_by", std::string(to_string(trace.terminated_by))},
              {"answer", trace.answer ? Json(*trace.answer) : Json(nullptr)},
              {"forward_steps", trace.forward_steps}};
  return out.dump();
}

GenerationTrace trace_from_json(const std::string& line) {
  GenerationTrace t;
  try {
    const Json j = Json::parse(line);
    t.prompt_id = j.at("prompt_id").get<std::string>();
    t.prompt = j.value("prompt_tokens", std::vector<TokenId>{});
    t.gold = j.value("gold", std::string());
    const std::string term = j.at("terminated_by").get<std::string>();
    if (term != "eos" && term != "max_len") throw ValidationError("unknown terminated_by '" + term + "'");
    t.terminated_by = term == "eos" ? Termination::eos : Termination::max_len;
    if (!j.at("answer").is_null()) t.answer = j.at("answer").get<std::string>();
    t.forward_steps = j.value("forward_steps", std::size_t{0});
    std::size_t index = 0;
    for (const auto& s : j.at("steps")) {
      StepRecord r;
      r.token = s.at("token_id").get<TokenId>();
      r.piece = s.at("token").get<std::string>();
      r.entropy = s.at("entropy").get<double>();
      const auto& top = s.at("top_k");
      const auto ids = s.at("top_k_ids").get<std::vector<TokenId>>();
      if (ids.size() != top.size()) throw ValidationError("top_k and top_k_ids lengths differ");
      for (std::size_t k = 0; k < ids.size(); ++k) {
        r.top_k.emplace_back(ids[k], top[k].at(1).get<double>());
        r.top_k_pieces.push_back(top[k].at(0).get<std::string>());
      }
      if (s.contains("connective") && !s["connective"].is_null()) {
        const auto& c = s["connective"];
        const auto cls = relation_class_from_string(c.at("class").get<std::string>());
        if (!cls) throw ValidationError("unknown relation class in trace");
        r.connective = ConnectiveMatch{{c.at("surface").get<std::string>(), *cls}, index,
                                       c.at("span").get<std::size_t>()};
        if (r.connective->token_span == 0 || r.connective->token_span > index + 1) {
          throw ValidationError("connective span out of range");
        }
      }
      r.at_first_step = s.value("at_first_step", false);
      r.category = s.value("category", std::string());
      r.intervened = s.value("intervened", false);
      t.steps.push_back(std::move(r));
      ++index;
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed trace: ") + e.what());
  }
  return t;
}

void write_traces(const std::string& path, const std::vector<GenerationTrace>& traces, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write traces: " + path);
  for (const auto& t : traces) out << trace_to_json(t, vocab) << '\n';
}

std::vector<GenerationTrace> read_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read traces: " + path);
  std::vector<GenerationTrace> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trace_from_json(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pivot
