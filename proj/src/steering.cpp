#include "pivot/steering.hpp"

#include "pivot/error.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace pivot {

using Json = nlohmann::json;

std::string SteeringVector::to_json_text() const {
  Json j = {{"layer", layer},
            {"dim", values.size()},
            {"n_samples", n_samples},
            {"skipped", skipped},
            {"norm_mode", norm_mode},
            {"values", std::vector<double>(values.data(), values.data() + values.size())}};
  return j.dump();
}

SteeringVector SteeringVector::from_json_text(const std::string& text) {
  SteeringVector v;
  try {
    const Json j = Json::parse(text);
    v.layer = j.at("layer").get<int>();
    v.n_samples = j.at("n_samples").get<std::size_t>();
    v.skipped = j.value("skipped", std::size_t{0});
    v.norm_mode = j.value("norm_mode", std::string("l2-unit"));
    const auto vals = j.at("values").get<std::vector<double>>();
    if (j.contains("dim") && j["dim"].get<std::size_t>() != vals.size()) {
      throw ValidationError("steering vector: dim does not match the number of values");
    }
    v.values = Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("steering vector: ") + e.what());
  }
  if (v.n_samples < 1) throw ValidationError("steering vector: n_samples must be at least 1");
  if (!v.values.allFinite()) throw ValidationError("steering vector: non-finite entries");
  return v;
}

void SteeringVector::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write steering vector: " + path);
  out << to_json_text() << '\n';
}

SteeringVector SteeringVector::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read steering vector: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

bool normalize_l2(const Vector& g, Vector& out) {
  const double n = g.norm();
  if (!(n > 0) || !std::isfinite(n)) return false;
  out = g / n;
  return true;
}

SteeringVector extract_steering_vector(const LanguageModel& model, const std::vector<SteeringSample>& dataset,
                                       int layer, std::vector<std::string>* warnings) {
  if (dataset.empty()) throw ValidationError("steering extraction: empty dataset");
  model.require(&Capabilities::gradients, "steering extraction");
  model.require_layer(layer);
  SteeringVector sv;
  sv.layer = layer;
  Vector sum = Vector::Zero(model.width());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    model.require_token(s.target);
    const Vector g = model.grad_logprob_wrt_hidden(s.context, s.target, layer);
    Vector u;
    if (!normalize_l2(g, u)) {
      ++sv.skipped;
      if (warnings) warnings->push_back("sample " + std::to_string(i) + ": zero-norm gradient skipped");
      continue;
    }
    sum += u;
    ++sv.n_samples;
  }
  if (sv.n_samples == 0) throw ValidationError("steering extraction: every gradient had zero norm");
  sv.values = sum / static_cast<double>(sv.n_samples);
  return sv;
}

std::string_view to_string(SteeringTrigger t) {
  return t == SteeringTrigger::always ? "always" : "at-connective";
}

SteeringTrigger steering_trigger_from_string(std::string_view s) {
  if (s == "always") return SteeringTrigger::always;
  if (s == "at-connective") return SteeringTrigger::at_connective;
  throw ValidationError("unknown steering trigger '" + std::string(s) + "'");
}

GenerationTrace steer_decode(const LanguageModel& model, std::span<const TokenId> prompt, const SteeringVector& sv,
                             const SteeringConfig& cfg, const ConnectiveLexicon& lexicon,
                             const DecodeOptions& options, std::string prompt_id, std::string gold) {
  if (sv.layer != cfg.layer) {
    throw ValidationError("steering vector layer " + std::to_string(sv.layer) + " does not match configured layer " +
                          std::to_string(cfg.layer));
  }
  if (!std::isfinite(cfg.alpha)) throw ValidationError("steering coefficient must be finite");
  model.require_layer(cfg.layer);
  if (sv.values.size() != model.width()) throw ValidationError("steering vector width does not match the model");

  const std::vector<ResidualEdit> edits{additive_edit(cfg.layer, cfg.alpha * sv.values)};
  const auto detok = [&model](int id) { return model.vocab().piece(id); };
  DecodeSession s(model, {prompt.begin(), prompt.end()}, lexicon, options);
  while (!s.finished()) {
    if (cfg.trigger == SteeringTrigger::always) {
      const auto d = s.distribution(edits);
      s.emit(d.argmax(), d, cfg.alpha != 0.0);
      continue;
    }
    const auto plain = s.distribution();
    std::vector<TokenId> probe = s.context();
    probe.push_back(plain.argmax());
    if (match_suffix(probe, detok, lexicon)) {
      const auto d = s.distribution(edits);
      s.emit(d.argmax(), d, cfg.alpha != 0.0);
    } else {
      s.emit(plain.argmax(), plain);
    }
  }
  return s.finish(std::move(prompt_id), std::move(gold));
}

}  // namespace pivot
