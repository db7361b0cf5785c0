#include "doctest.h"
#include "bridge_fixture.hpp"
#include "fixtures.hpp"

#include "pivot/branching.hpp"
#include "pivot/diagnostics.hpp"
#include "pivot/error.hpp"
#include "pivot/steering.hpp"

#include <future>

using namespace pivot;

namespace {

BridgeEndpoint endpoint(const testing::BridgeFixture& f) {
  BridgeEndpoint e;
  e.base_url = f.url();
  e.timeout_seconds = 10;
  return e;
}

}  // namespace

TEST_SUITE("bridge") {
  TEST_CASE("connect discovers shape, vocabulary and capabilities") {
    const auto& m = testing::trained_model();
    testing::BridgeFixture server(m);
    const auto remote = BridgeModel::connect(endpoint(server));
    CHECK(remote->depth() == m.depth());
    CHECK(remote->width() == m.width());
    CHECK(remote->context_limit() == m.context_limit());
    CHECK(remote->vocab().pieces() == m.vocab().pieces());
    CHECK(remote->model_id() == m.model_id());
    CHECK(remote->capabilities().gradients);
    CHECK(remote->encode_prompt("alice beats bob") == m.encode_prompt("alice beats bob"));
  }

  TEST_CASE("distributions, hidden states and gradients agree with the local model") {
    const auto& m = testing::trained_model();
    testing::BridgeFixture server(m);
    const auto remote = BridgeModel::connect(endpoint(server));
    const auto ctx = m.encode_prompt("carol guards dave . who wins ? okay , carol guards dave .");
    const std::vector<ResidualEdit> edits{additive_edit(1, Vector::Constant(m.width(), 0.05))};
    const auto a = remote->next_distribution(ctx, edits);
    const auto b = m.next_distribution(ctx, edits);
    CHECK((a.probs - b.probs).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(std::abs(a.entropy - b.entropy) <= 1e-6);
    CHECK((remote->hidden_state(ctx, 2).vector - m.hidden_state(ctx, 2).vector).cwiseAbs().maxCoeff() <= 1e-6);
    const TokenId t = *m.vocab().find_word("therefore");
    CHECK((remote->grad_logprob_wrt_hidden(ctx, t, 1) - m.grad_logprob_wrt_hidden(ctx, t, 1)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(remote->generate(ctx, 5, std::vector<TokenId>{m.vocab().eos()}) ==
          m.generate(ctx, 5, std::vector<TokenId>{m.vocab().eos()}));
  }

  TEST_CASE("diagnostics and branching through the bridge match in-process results") {
    const auto& m = testing::trained_model();
    testing::BridgeFixture server(m);
    const auto remote = BridgeModel::connect(endpoint(server));
    const ToyGrammar g(m.spec().corpus);
    const auto prompts = g.prompts();
    std::vector<GenerationTrace> local, wire;
    for (std::size_t i = 0; i < prompts.size(); i += 56) {
      const auto& p = prompts[i];
      local.push_back(greedy_decode(m, m.encode_prompt(g.prompt_text(p)), testing::lexicon(), {}, p.id, g.gold(p)));
      wire.push_back(greedy_decode(*remote, remote->encode_prompt(g.prompt_text(p)), testing::lexicon(), {}, p.id, g.gold(p)));
    }
    CHECK(std::abs(high_entropy_rate(local, testing::lexicon(), 1.0) - high_entropy_rate(wire, testing::lexicon(), 1.0)) <= 1e-6);
    for (std::size_t i = 0; i < local.size(); ++i) {
      REQUIRE(local[i].steps.size() == wire[i].steps.size());
      for (std::size_t s = 0; s < local[i].steps.size(); ++s) {
        CHECK(local[i].steps[s].token == wire[i].steps[s].token);
        CHECK(std::abs(local[i].steps[s].entropy - wire[i].steps[s].entropy) <= 1e-6);
      }
    }
    BranchConfig cfg;
    cfg.lookahead = 6;
    const auto& p = prompts[prompts.size() - 1];
    const auto lb = branch_decode(m, m.encode_prompt(g.prompt_text(p)), testing::lexicon(), cfg);
    const auto wb = branch_decode(*remote, remote->encode_prompt(g.prompt_text(p)), testing::lexicon(), cfg);
    CHECK(lb.trace.completion_tokens() == wb.trace.completion_tokens());
    CHECK(lb.total_forward_steps == wb.total_forward_steps);
    REQUIRE(lb.log.size() == wb.log.size());
    for (std::size_t i = 0; i < lb.log.size(); ++i) {
      CHECK(lb.log[i].chosen == wb.log[i].chosen);
      for (std::size_t c = 0; c < lb.log[i].candidates.size(); ++c) {
        CHECK(std::abs(lb.log[i].candidates[c].score - wb.log[i].candidates[c].score) <= 1e-6);
      }
    }
  }

  TEST_CASE("missing gradients fail fast with a capability error") {
    const auto& m = testing::small_model();
    testing::ServerFaults faults;
    faults.no_gradients = true;
    testing::BridgeFixture server(m, faults);
    const auto remote = BridgeModel::connect(endpoint(server));
    CHECK(!remote->capabilities().gradients);
    const int before = server.requests();
    const std::vector<SteeringSample> ds{{m.encode_prompt("alice beats bob"), 3}};
    CHECK_THROWS_AS(extract_steering_vector(*remote, ds, 1), CapabilityError);
    CHECK(server.requests() == before);
  }

  TEST_CASE("malformed probability vectors are rejected naming the invariant") {
    const auto& m = testing::small_model();
    testing::ServerFaults faults;
    faults.prob_scale = 0.9;
    testing::BridgeFixture server(m, faults);
    const auto remote = BridgeModel::connect(endpoint(server));
    try {
      remote->next_distribution(m.encode_prompt("alice beats bob"));
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("sum") != std::string::npos);
    }
  }

  TEST_CASE("protocol version mismatch is an error") {
    const auto& m = testing::small_model();
    testing::ServerFaults faults;
    faults.protocol_version = kBridgeProtocolVersion + 1;
    testing::BridgeFixture server(m, faults);
    CHECK_THROWS_AS(BridgeModel::connect(endpoint(server)), ProtocolError);
  }

  TEST_CASE("generate is never retried") {
    const auto& m = testing::small_model();
    testing::ServerFaults faults;
    faults.fail_generate = true;
    testing::BridgeFixture server(m, faults);
    auto ep = endpoint(server);
    ep.retries = 5;
    const auto remote = BridgeModel::connect(ep);
    CHECK_THROWS_AS(remote->generate(m.encode_prompt("alice"), 3, {}), ValidationError);
    CHECK(server.generate_calls() == 1);
  }

  TEST_CASE("unreachable server and bearer tokens") {
    BridgeEndpoint ep;
    ep.base_url = "http://127.0.0.1:1";
    ep.timeout_seconds = 2;
    ep.retries = 0;
    CHECK_THROWS_AS(BridgeModel::connect(ep), BackendError);
    const auto& m = testing::small_model();
    testing::ServerFaults faults;
    faults.required_token = "s3cret";
    testing::BridgeFixture server(m, faults);
    auto good = endpoint(server);
    CHECK_THROWS_AS(BridgeModel::connect(good), BackendError);
    good.bearer_token = "s3cret";
    CHECK_NOTHROW(BridgeModel::connect(good));
  }

  TEST_CASE("non-additive edits cannot cross the wire") {
    const auto& m = testing::small_model();
    testing::BridgeFixture server(m);
    const auto remote = BridgeModel::connect(endpoint(server));
    const std::vector<ResidualEdit> e{{1, [](const Vector& h) { return Vector(2.0 * h); }, std::nullopt}};
    CHECK_THROWS_AS(remote->next_distribution(m.encode_prompt("alice"), e), ValidationError);
  }

  TEST_CASE("concurrent requests stay correct under the in-flight limit") {
    const auto& m = testing::small_model();
    testing::BridgeFixture server(m);
    auto ep = endpoint(server);
    ep.max_in_flight = 2;
    const auto remote = BridgeModel::connect(ep);
    const auto ctx = m.encode_prompt("alice beats bob . who wins ?");
    const auto expect = m.next_distribution(ctx);
    std::vector<std::future<double>> futures;
    for (int i = 0; i < 8; ++i) {
      futures.push_back(std::async(std::launch::async, [&] {
        return (remote->next_distribution(ctx).probs - expect.probs).cwiseAbs().maxCoeff();
      }));
    }
    for (auto& f : futures) CHECK(f.get() <= 1e-12);
  }
}
