#include "doctest.h"
#include "fixtures.hpp"

#include "pivot/answer.hpp"
#include "pivot/error.hpp"
#include "pivot/lexicon.hpp"
#include "pivot/lm.hpp"
#include "pivot/numeric.hpp"
#include "pivot/rng.hpp"
#include "pivot/vocab.hpp"

#include <algorithm>
#include <cmath>

using namespace pivot;

TEST_SUITE("numeric") {
  TEST_CASE("entropy of uniform and point masses") {
    Vector u = Vector::Constant(8, 1.0 / 8);
    CHECK(entropy(u) == doctest::Approx(std::log(8.0)).epsilon(1e-14));
    Vector d = Vector::Zero(5);
    d(2) = 1.0;
    CHECK(entropy(d) == 0.0);
  }

  TEST_CASE("log_softmax is shift invariant and normalized") {
    Vector x(4);
    x << 1.0, -2.0, 0.5, 700.0;
    const Vector a = log_softmax(x);
    const Vector b = log_softmax((x.array() - 30.0).matrix());
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("entropy from log probs agrees with entropy from probs") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      Vector x(12);
      for (int i = 0; i < 12; ++i) x(i) = 3 * rng.normal();
      const Vector lp = log_softmax(x);
      CHECK(entropy_from_log_probs(lp) == doctest::Approx(entropy(softmax(x))).epsilon(1e-12));
    }
  }

  TEST_CASE("z-scores: two elements are exact negatives, constants give zeros") {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
      Vector x(2);
      x << rng.normal() * 10, rng.normal() * 1e-3;
      const Vector z = zscores(x, 1e-8);
      CHECK(z(0) == -z(1));
    }
    const Vector c = zscores(Vector::Constant(4, 2.5), 1e-8);
    CHECK(c.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("z-scores match the textbook formula") {
    Vector x(5);
    x << 1, 2, 4, 8, 16;
    const double mean = x.mean();
    const double sd = std::sqrt((x.array() - mean).square().mean());
    const Vector z = zscores(x, 1e-8);
    for (int i = 0; i < 5; ++i) CHECK(z(i) == doctest::Approx((x(i) - mean) / (sd + 1e-8)).epsilon(1e-12));
  }

  TEST_CASE("sigmoid helpers are stable") {
    CHECK(neg_log_sigmoid(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(neg_log_sigmoid(-800.0) == doctest::Approx(800.0));
    CHECK(neg_log_sigmoid(800.0) >= 0.0);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(3.0) + sigmoid(-3.0) == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("linear-interpolation quantile") {
    CHECK(quantile_linear({1, 2, 3, 4, 5}, 0.5) == 3.0);
    CHECK(quantile_linear({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile_linear({5, 1, 3}, 1.0) == 5.0);
    CHECK(quantile_linear({5, 1, 3}, 0.0) == 1.0);
    CHECK(quantile_linear({0, 10}, 0.9) == doctest::Approx(9.0));
  }
}

TEST_SUITE("numeric") {
  TEST_CASE("rng streams are reproducible and bounded") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
      const auto x = r.below(7);
      CHECK(x < 7);
      const double u = r.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
    auto idx = Rng(9).sample_indices(10, 10);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(idx[i] == i);
    CHECK(derive_seed(7, "a") != derive_seed(7, "b"));
    CHECK(stable_hash("") == 0xcbf29ce484222325ULL);
  }
}

TEST_SUITE("lexicon") {
  TEST_CASE("builtin lexicon has ten classes and excludes coordinators") {
    const auto& lex = testing::lexicon();
    for (RelationClass c : all_relation_classes()) CHECK(!lex.phrases_in(c).empty());
    CHECK(!lex.contains("and"));
    CHECK(!lex.contains("or"));
    CHECK(lex.contains("As  A Result"));
    CHECK(lex.find("however")->relation == RelationClass::Contrast);
    CHECK(lex.find("therefore")->relation == RelationClass::Causal);
  }

  TEST_CASE("parse rejects bad input") {
    CHECK_THROWS_AS(ConnectiveLexicon::parse("[Causal]\nand\n"), ValidationError);
    CHECK_THROWS_AS(ConnectiveLexicon::parse("[Causal]\nthus\nthus\n"), ValidationError);
    CHECK_THROWS_AS(ConnectiveLexicon::parse("[Nope]\nthus\n"), ValidationError);
    CHECK_THROWS_AS(ConnectiveLexicon::parse("thus\n"), ValidationError);
  }

  TEST_CASE("serialize round-trips") {
    const auto& lex = testing::lexicon();
    const auto again = ConnectiveLexicon::parse(lex.serialize());
    CHECK(again.phrases() == lex.phrases());
  }

  TEST_CASE("suffix matcher prefers the longest phrase on word boundaries") {
    const auto& lex = testing::lexicon();
    std::vector<std::string> pieces{" we", " rather", " than", " go", " so", " therefore"};
    const Detokenizer detok = [&](int id) { return pieces[static_cast<std::size_t>(id)]; };
    std::vector<int> ids{0, 1, 2};
    auto m = match_suffix(ids, detok, lex);
    REQUIRE(m);
    CHECK(m->phrase.surface == "rather than");
    CHECK(m->token_span == 2);
    CHECK(m->start_position() == 1);
    ids = {0, 3};
    CHECK(!match_suffix(ids, detok, lex));
    // "heretofore" must not match "for" inside a word: use a piece ending in "for".
    std::vector<std::string> glued{" the", "ref", "or"};
    const Detokenizer gd = [&](int id) { return glued[static_cast<std::size_t>(id)]; };
    std::vector<int> g{0, 1, 2};
    CHECK(!match_suffix(g, gd, lex));
  }

  TEST_CASE("streaming annotation replaces overlapped shorter matches") {
    const auto& lex = testing::lexicon();
    std::vector<std::string> pieces{" even", " if", " it", " rains", " as", " a", " result"};
    const Detokenizer detok = [&](int id) { return pieces[static_cast<std::size_t>(id)]; };
    std::vector<int> ids{0, 1, 2, 3, 4, 5, 6};
    const auto ms = annotate_connectives(ids, detok, lex);
    REQUIRE(ms.size() == 2);
    CHECK(ms[0].phrase.surface == "even if");
    CHECK(ms[0].start_position() == 0);
    CHECK(ms[1].phrase.surface == "as a result");
    CHECK(ms[1].end_position == 6);
    // A phrase straddling the boundary is not reported, not even its suffix.
    const auto tail = annotate_connectives(ids, detok, lex, 1);
    REQUIRE(tail.size() == 1);
    CHECK(tail[0].phrase.surface == "as a result");
  }
}

TEST_SUITE("lm") {
  TEST_CASE("vocabulary tokenizes greedily and round-trips") {
    const auto vocab = ToyGrammar().vocabulary();
    const auto ids = vocab.tokenize("alice beats bob . as a result bob wins");
    CHECK(vocab.detokenize(ids) == "alice beats bob . as a result bob wins");
    CHECK(std::count(ids.begin(), ids.end(), *vocab.find_word("as a result")) == 1);
    CHECK_THROWS_AS(vocab.tokenize("zebra"), ValidationError);
  }

  TEST_CASE("distribution validation names the violated invariant") {
    Vector p(3);
    p << 0.3, 0.3, 0.3;
    try {
      VocabDistribution::from_probs(p);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("sum") != std::string::npos);
    }
    p << 0.5, 0.6, -0.1;
    CHECK_THROWS_AS(VocabDistribution::from_probs(p), ValidationError);
    p << 0.5, 0.25, 0.25;
    const auto d = VocabDistribution::from_probs(p);
    CHECK(d.entropy == doctest::Approx(1.5 * std::log(2.0)));
    CHECK_THROWS_AS(VocabDistribution::from_probs(p, 3.0), ValidationError);
    CHECK(d.top_k(2)[0].first == 0);
  }

  TEST_CASE("top_k orders by probability then id") {
    Vector p(4);
    p << 0.25, 0.25, 0.4, 0.1;
    const auto d = VocabDistribution::from_probs(p);
    const auto top = d.top_k(3);
    CHECK(top[0].first == 2);
    CHECK(top[1].first == 0);
    CHECK(top[2].first == 1);
    CHECK(d.argmax() == 2);
  }

  TEST_CASE("hooked model composes edits and restores the base") {
    const auto& m = testing::small_model();
    const auto ctx = m.encode_prompt("alice beats bob . who wins ?");
    const auto base = m.next_distribution(ctx);
    // Constant shifts vanish under LayerNorm, so use a non-constant direction.
    Vector v = Vector::LinSpaced(m.width(), -0.5, 0.5);
    {
      auto hooked = apply_activation_hook(m, 1, [&](const Vector& h) { return Vector(h + v); });
      const auto steered = hooked.next_distribution(ctx);
      const auto direct = m.next_distribution(ctx, std::vector<ResidualEdit>{additive_edit(1, v)});
      CHECK((steered.probs - direct.probs).cwiseAbs().maxCoeff() < 1e-15);
      CHECK((steered.probs - base.probs).cwiseAbs().maxCoeff() > 1e-6);
      CHECK_THROWS_AS(hooked.add(additive_edit(1, v)), ValidationError);
    }
    const auto again = m.next_distribution(ctx);
    CHECK((again.probs - base.probs).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("counting model counts next-token forwards only") {
    const auto& m = testing::small_model();
    CountingModel c(m);
    const auto ctx = m.encode_prompt("alice beats bob . who wins ?");
    c.next_distribution(ctx);
    c.hidden_state(ctx, 1);
    c.next_distribution(ctx);
    CHECK(c.forward_steps() == 2);
  }

  TEST_CASE("layer and token preconditions") {
    const auto& m = testing::small_model();
    const auto ctx = m.encode_prompt("alice beats bob");
    CHECK_THROWS_AS(m.hidden_state(ctx, m.depth() + 1), ValidationError);
    CHECK_THROWS_AS(m.grad_logprob_wrt_hidden(ctx, static_cast<TokenId>(m.vocab().size()), 1), ValidationError);
  }
}

TEST_SUITE("decode") {
  TEST_CASE("boxed answer extraction") {
    CHECK(extract_boxed_answer("x \\boxed{ Bob } y").value() == "Bob");
    CHECK(extract_boxed_answer("\\boxed{a} then \\boxed{ {b} }").value() == "{b}");
    CHECK(extract_boxed_answer("/boxed{carol}").value() == "carol");
    CHECK(!extract_boxed_answer("no box here"));
    CHECK(!extract_boxed_answer("\\boxed{unbalanced"));
    CHECK(check_answer("so \\boxed{Bob }", "bob"));
    CHECK(!check_answer("so \\boxed{Bobby}", "bob"));
    CHECK(!check_answer("bob", "bob"));
  }
}
