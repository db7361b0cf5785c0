#pragma once

// In-process HTTP server speaking the bridge protocol over a local model.
// Test-only; the production server lives outside this repository.

#include "pivot/bridge.hpp"
#include "pivot/lm.hpp"

#include "httplib.h"
#include "json.hpp"

#include <atomic>
#include <string>
#include <thread>

namespace pivot::testing {

struct ServerFaults {
  bool no_gradients = false;
  double prob_scale = 1.0;  // 0.9 yields a malformed distribution
  int protocol_version = kBridgeProtocolVersion;
  bool fail_generate = false;
  std::string required_token;
};

class BridgeFixture {
 public:
  explicit BridgeFixture(const LanguageModel& model, ServerFaults faults = {}) : model_(model), faults_(faults) {
    using Json = nlohmann::json;
    auto handle = [this](const char* path, auto fn) {
      server_.Post(path, [this, fn](const httplib::Request& req, httplib::Response& res) {
        ++requests_;
        if (!faults_.required_token.empty() && req.get_header_value("Authorization") != "Bearer " + faults_.required_token) {
          reply_error(res, 401, "auth", "missing or wrong bearer token");
          return;
        }
        Json in;
        try {
          in = Json::parse(req.body);
        } catch (...) {
          reply_error(res, 400, "validation", "body is not JSON");
          return;
        }
        if (in.value("protocol_version", -1) != kBridgeProtocolVersion) {
          reply_error(res, 400, "protocol", "unsupported protocol version");
          return;
        }
        try {
          Json out = fn(in);
          out["protocol_version"] = faults_.protocol_version;
          res.set_content(out.dump(), "application/json");
        } catch (const std::exception& e) {
          reply_error(res, 400, "validation", e.what());
        }
      });
    };
    handle("/v1/capabilities", [this](const Json&) {
      return Json{{"model_id", model_.model_id()},
                  {"depth", model_.depth()},
                  {"width", model_.width()},
                  {"context_limit", model_.context_limit()},
                  {"vocab", model_.vocab().pieces()},
                  {"bos", model_.vocab().bos()},
                  {"eos", model_.vocab().eos()},
                  {"capabilities",
                   {{"distributions", true},
                    {"hidden_states", true},
                    {"gradients", !faults_.no_gradients},
                    {"generate", true}}}};
    });
    handle("/v1/tokenize", [this](const Json& in) {
      auto ids = model_.vocab().tokenize(in.at("text").get<std::string>());
      if (in.value("add_bos", false)) ids.insert(ids.begin(), model_.vocab().bos());
      return Json{{"tokens", ids}};
    });
    handle("/v1/next_distribution", [this](const Json& in) {
      const auto d = model_.next_distribution(tokens(in), edits(in));
      Json top = Json::array();
      for (const auto& [id, p] : d.top_k(in.value("top_k", std::size_t{20}))) top.push_back({id, p});
      Json out{{"top_k", top}, {"entropy", d.entropy}};
      if (in.value("full", false)) {
        std::vector<double> probs(d.probs.begin(), d.probs.end());
        for (auto& p : probs) p *= faults_.prob_scale;
        out["probs"] = probs;
      }
      return out;
    });
    handle("/v1/hidden_state", [this](const Json& in) {
      const auto h = model_.hidden_state(tokens(in), in.at("layer").get<int>(), edits(in));
      return Json{{"layer", h.layer}, {"vector", std::vector<double>(h.vector.begin(), h.vector.end())}};
    });
    handle("/v1/grad_logprob", [this](const Json& in) {
      if (faults_.no_gradients) throw std::runtime_error("gradients unsupported");
      const Vector g = model_.grad_logprob_wrt_hidden(tokens(in), in.at("target").get<TokenId>(),
                                                      in.at("layer").get<int>(), edits(in));
      return Json{{"layer", in.at("layer")}, {"gradient", std::vector<double>(g.begin(), g.end())}};
    });
    handle("/v1/generate", [this](const Json& in) {
      ++generate_calls_;
      if (faults_.fail_generate) throw std::runtime_error("generation failed");
      const auto stop = in.at("stop").get<std::vector<TokenId>>();
      return Json{{"tokens", model_.generate(tokens(in), in.at("max_new").get<std::size_t>(), stop)}};
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~BridgeFixture() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int generate_calls() const { return generate_calls_.load(); }
  int requests() const { return requests_.load(); }

 private:
  static void reply_error(httplib::Response& res, int status, const char* code, const std::string& msg) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", {{"code", code}, {"message", msg}}}}.dump(), "application/json");
  }
  static std::vector<TokenId> tokens(const nlohmann::json& in) { return in.at("tokens").get<std::vector<TokenId>>(); }
  static std::vector<ResidualEdit> edits(const nlohmann::json& in) {
    std::vector<ResidualEdit> out;
    if (!in.contains("edits")) return out;
    for (const auto& e : in["edits"]) {
      const auto d = e.at("delta").get<std::vector<double>>();
      out.push_back(additive_edit(e.at("layer").get<int>(), Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()))));
    }
    return out;
  }

  const LanguageModel& model_;
  ServerFaults faults_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> generate_calls_{0};
  std::atomic<int> requests_{0};
};

}  // namespace pivot::testing
