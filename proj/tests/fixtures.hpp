#pragma once

#include "pivot/decode.hpp"
#include "pivot/lexicon.hpp"
#include "pivot/toy_grammar.hpp"
#include "pivot/toy_model.hpp"

#include <filesystem>
#include <string>
#include <vector>

#ifndef PIVOT_TOY_MODEL_PATH
#define PIVOT_TOY_MODEL_PATH "toy_model.json"
#endif
#ifndef PIVOT_GOLDEN_DIR
#define PIVOT_GOLDEN_DIR "golden"
#endif

namespace pivot::testing {

// Small untrained model over the toy-grammar vocabulary.
inline const ToyTransformer& small_model() {
  static const ToyTransformer m = [] {
    ToyModelSpec spec;
    spec.width = 16;
    spec.heads = 2;
    spec.mlp_multiplier = 2;
    spec.seed = 11;
    return ToyTransformer(spec, ToyGrammar(spec.corpus).vocabulary());
  }();
  return m;
}

// The model trained at build time.
inline const ToyTransformer& trained_model() {
  static const ToyTransformer m = ToyTransformer::load(PIVOT_TOY_MODEL_PATH);
  return m;
}

inline const ConnectiveLexicon& lexicon() {
  static const ConnectiveLexicon lex = ConnectiveLexicon::builtin();
  return lex;
}

// Trace built from word pieces and entropies; connective annotations are filled in.
inline GenerationTrace synthetic_trace(const std::vector<std::string>& words, const std::vector<double>& entropies,
                                       const std::string& id = "t") {
  GenerationTrace t;
  t.prompt_id = id;
  for (std::size_t i = 0; i < words.size(); ++i) {
    StepRecord s;
    s.token = static_cast<TokenId>(i);
    s.piece = " " + words[i];
    s.entropy = entropies.at(i);
    t.steps.push_back(std::move(s));
  }
  std::vector<int> ids(words.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  for (const auto& m : annotate_connectives(ids, [&](int id) { return t.steps[static_cast<std::size_t>(id)].piece; },
                                            lexicon())) {
    t.steps[m.end_position].connective = m;
  }
  return t;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pivot-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace pivot::testing
