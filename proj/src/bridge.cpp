#include "pivot/bridge.hpp"

#include "pivot/error.hpp"

#include "httplib.h"
#include "json.hpp"

#include <cmath>
#include <cstdlib>
#include <semaphore>

namespace pivot {
namespace {

using Json = nlohmann::json;

Json tokens_json(std::span<const TokenId> ts) {
  return Json(std::vector<TokenId>(ts.begin(), ts.end()));
}

Json edits_json(std::span<const ResidualEdit> edits) {
  Json out = Json::array();
  for (const auto& e : edits) {
    if (!e.additive) throw ValidationError("only additive residual edits can be sent to a remote model");
    out.push_back({{"layer", e.layer}, {"delta", std::vector<double>(e.additive->begin(), e.additive->end())}});
  }
  return out;
}

Vector vector_from(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) throw ProtocolError(std::string("response lacks array '") + key + "'");
  Vector v(static_cast<Eigen::Index>(j[key].size()));
  for (std::size_t i = 0; i < j[key].size(); ++i) {
    const auto& x = j[key][i];
    if (!x.is_number()) throw ProtocolError(std::string("non-numeric entry in '") + key + "'");
    v(static_cast<Eigen::Index>(i)) = x.get<double>();
  }
  return v;
}

}  // namespace

BridgeEndpoint BridgeEndpoint::from_env(const std::string& url) {
  BridgeEndpoint e;
  if (!url.empty()) {
    e.base_url = url;
  } else if (const char* v = std::getenv("PIVOT_BRIDGE_ENDPOINT"); v != nullptr) {
    e.base_url = v;
  }
  if (const char* t = std::getenv("PIVOT_BRIDGE_TOKEN"); t != nullptr) e.bearer_token = t;
  return e;
}

struct BridgeModel::Impl {
  BridgeEndpoint ep;
  Vocabulary vocab;
  int depth = 0;
  int width = 0;
  std::size_t context_limit = 0;
  Capabilities caps;
  std::string model_id;
  std::unique_ptr<std::counting_semaphore<>> slots;

  httplib::Client client() const {
    httplib::Client c(ep.base_url);
    const auto secs = static_cast<time_t>(ep.timeout_seconds);
    const auto usecs = static_cast<time_t>((ep.timeout_seconds - static_cast<double>(secs)) * 1e6);
    c.set_connection_timeout(secs, usecs);
    c.set_read_timeout(secs, usecs);
    c.set_write_timeout(secs, usecs);
    if (!ep.bearer_token.empty()) c.set_bearer_token_auth(ep.bearer_token);
    return c;
  }

  Json check(const httplib::Result& res, const std::string& path) const {
    if (!res) throw BackendError("bridge " + ep.base_url + path + ": " + httplib::to_string(res.error()));
    Json body;
    try {
      body = Json::parse(res->body);
    } catch (const Json::exception&) {
      throw ProtocolError("bridge " + path + ": response is not JSON (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status != 200) {
      std::string code = "backend";
      std::string msg = res->body;
      if (body.contains("error") && body["error"].is_object()) {
        code = body["error"].value("code", code);
        msg = body["error"].value("message", msg);
      }
      const std::string text = "bridge " + path + ": " + msg;
      if (code == "capability") throw CapabilityError(text);
      if (code == "protocol") throw ProtocolError(text);
      if (code == "validation") throw ValidationError(text);
      throw BackendError(text);
    }
    if (!body.contains("protocol_version") || body["protocol_version"] != kBridgeProtocolVersion) {
      throw ProtocolError("bridge " + path + ": protocol version mismatch (client " +
                          std::to_string(kBridgeProtocolVersion) + ", server " +
                          (body.contains("protocol_version") ? body["protocol_version"].dump() : "none") + ")");
    }
    return body;
  }

  Json call(const std::string& path, Json request, bool idempotent) const {
    request["protocol_version"] = kBridgeProtocolVersion;
    const std::string payload = request.dump();
    const httplib::Headers headers{{"X-Pivot-Protocol", std::to_string(kBridgeProtocolVersion)}};
    if (slots) slots->acquire();
    struct Release {
      std::counting_semaphore<>* s;
      ~Release() {
        if (s) s->release();
      }
    } release{slots.get()};
    const int attempts = idempotent ? 1 + std::max(0, ep.retries) : 1;
    for (int a = 0;; ++a) {
      auto c = client();
      auto res = c.Post(path, headers, payload, "application/json");
      // Retry only when no response arrived at all.
      if (!res && a + 1 < attempts) continue;
      return check(res, path);
    }
  }

  void require(bool flag, const char* what) const {
    if (!flag) throw CapabilityError(std::string("bridge model lacks the ") + what + " capability");
  }
};

BridgeModel::BridgeModel(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
BridgeModel::~BridgeModel() = default;

std::unique_ptr<BridgeModel> BridgeModel::connect(const BridgeEndpoint& endpoint) {
  if (endpoint.base_url.empty()) throw ValidationError("bridge endpoint URL is empty (set --endpoint or PIVOT_BRIDGE_ENDPOINT)");
  if (endpoint.max_in_flight < 1) throw ValidationError("bridge in-flight limit must be at least 1");
  if (!(endpoint.timeout_seconds > 0)) throw ValidationError("bridge timeout must be positive");
  auto impl = std::make_unique<Impl>();
  impl->ep = endpoint;
  impl->slots = std::make_unique<std::counting_semaphore<>>(endpoint.max_in_flight);
  const Json j = impl->call("/v1/capabilities", Json::object(), true);
  try {
    const auto& c = j.at("capabilities");
    impl->caps.distributions = c.value("distributions", false);
    impl->caps.hidden_states = c.value("hidden_states", false);
    impl->caps.gradients = c.value("gradients", false);
    impl->caps.generate = c.value("generate", false);
    impl->model_id = j.value("model_id", std::string("remote"));
    impl->depth = j.at("depth").get<int>();
    impl->width = j.at("width").get<int>();
    impl->context_limit = j.at("context_limit").get<std::size_t>();
    impl->vocab = Vocabulary(j.at("vocab").get<std::vector<std::string>>(), j.at("bos").get<TokenId>(),
                             j.at("eos").get<TokenId>());
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("bridge /v1/capabilities: ") + e.what());
  }
  if (impl->depth < 1 || impl->width < 1 || impl->context_limit < 2 || impl->vocab.size() < 2) {
    throw ProtocolError("bridge /v1/capabilities: implausible model shape");
  }
  return std::unique_ptr<BridgeModel>(new BridgeModel(std::move(impl)));
}

const Vocabulary& BridgeModel::vocab() const { return impl_->vocab; }
int BridgeModel::depth() const { return impl_->depth; }
int BridgeModel::width() const { return impl_->width; }
std::size_t BridgeModel::context_limit() const { return impl_->context_limit; }
Capabilities BridgeModel::capabilities() const { return impl_->caps; }
std::string BridgeModel::model_id() const { return impl_->model_id; }
const BridgeEndpoint& BridgeModel::endpoint() const { return impl_->ep; }

std::vector<TokenId> BridgeModel::encode_prompt(std::string_view text) const {
  const Json j = impl_->call("/v1/tokenize", {{"text", std::string(text)}, {"add_bos", true}}, true);
  std::vector<TokenId> out;
  try {
    out = j.at("tokens").get<std::vector<TokenId>>();
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("bridge /v1/tokenize: ") + e.what());
  }
  for (TokenId t : out) {
    if (t < 0 || static_cast<std::size_t>(t) >= impl_->vocab.size()) throw ProtocolError("bridge /v1/tokenize: token id out of range");
  }
  return out;
}

VocabDistribution BridgeModel::next_distribution(std::span<const TokenId> context,
                                                 std::span<const ResidualEdit> edits) const {
  impl_->require(impl_->caps.distributions, "distributions");
  if (context.empty()) throw ValidationError("next_distribution needs a non-empty context");
  for (const auto& e : edits) require_layer(e.layer);
  const Json j = impl_->call("/v1/next_distribution",
                             {{"tokens", tokens_json(context)},
                              {"top_k", impl_->ep.top_k},
                              {"full", true},
                              {"edits", edits_json(edits)}},
                             true);
  if (!j.contains("probs")) throw ProtocolError("bridge /v1/next_distribution: full probability vector missing");
  if (!j.contains("entropy") || !j["entropy"].is_number()) {
    throw ProtocolError("bridge /v1/next_distribution: server entropy missing");
  }
  Vector probs = vector_from(j, "probs");
  if (static_cast<std::size_t>(probs.size()) != impl_->vocab.size()) {
    throw ProtocolError("bridge /v1/next_distribution: probability vector has the wrong length");
  }
  return VocabDistribution::from_probs(std::move(probs), j["entropy"].get<double>());
}

HiddenState BridgeModel::hidden_state(std::span<const TokenId> context, int layer,
                                      std::span<const ResidualEdit> edits) const {
  impl_->require(impl_->caps.hidden_states, "hidden_states");
  require_layer(layer);
  const Json j = impl_->call("/v1/hidden_state",
                             {{"tokens", tokens_json(context)}, {"layer", layer}, {"edits", edits_json(edits)}}, true);
  HiddenState h{layer, vector_from(j, "vector")};
  if (h.vector.size() != impl_->width) throw ProtocolError("bridge /v1/hidden_state: vector has the wrong width");
  if (!h.vector.allFinite()) throw ProtocolError("bridge /v1/hidden_state: non-finite entries");
  return h;
}

Vector BridgeModel::grad_logprob_wrt_hidden(std::span<const TokenId> context, TokenId target, int layer,
                                            std::span<const ResidualEdit> edits) const {
  impl_->require(impl_->caps.gradients, "gradients");
  require_layer(layer);
  require_token(target);
  const Json j = impl_->call(
      "/v1/grad_logprob",
      {{"tokens", tokens_json(context)}, {"target", target}, {"layer", layer}, {"edits", edits_json(edits)}}, true);
  Vector g = vector_from(j, "gradient");
  if (g.size() != impl_->width) throw ProtocolError("bridge /v1/grad_logprob: gradient has the wrong width");
  if (!g.allFinite()) throw ProtocolError("bridge /v1/grad_logprob: non-finite entries");
  return g;
}

std::vector<TokenId> BridgeModel::generate(std::span<const TokenId> context, std::size_t max_new,
                                           std::span<const TokenId> stop) const {
  impl_->require(impl_->caps.generate, "generate");
  const Json j = impl_->call(
      "/v1/generate", {{"tokens", tokens_json(context)}, {"max_new", max_new}, {"stop", tokens_json(stop)}}, false);
  std::vector<TokenId> out;
  try {
    out = j.at("tokens").get<std::vector<TokenId>>();
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("bridge /v1/generate: ") + e.what());
  }
  if (out.size() > max_new) throw ProtocolError("bridge /v1/generate: more tokens than requested");
  return out;
}

}  // namespace pivot
