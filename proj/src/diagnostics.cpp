#include "pivot/diagnostics.hpp"

#include "pivot/error.hpp"
#include "pivot/numeric.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

namespace pivot {
namespace {

using Json = nlohmann::json;

std::vector<ConnectiveMatch> step_matches(const GenerationTrace& trace, const ConnectiveLexicon& lexicon) {
  std::vector<int> idx(trace.steps.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto detok = [&trace](int i) { return trace.steps[static_cast<std::size_t>(i)].piece; };
  return annotate_connectives(idx, detok, lexicon, 0);
}

bool contains(const std::vector<std::string>& words, const std::string& w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

}  // namespace

bool is_connective_token(std::string_view piece, const ConnectiveLexicon& lexicon) {
  const std::string norm = normalize_text(piece);
  return !norm.empty() && lexicon.contains(norm);
}

std::vector<ConnectiveEvent> connective_events(const GenerationTrace& trace, const ConnectiveLexicon& lexicon,
                                               std::size_t trace_index) {
  std::vector<ConnectiveEvent> out;
  for (const auto& m : step_matches(trace, lexicon)) {
    out.push_back({trace_index, m.start_position(), m.end_position, m.phrase,
                   trace.steps[m.start_position()].entropy});
  }
  return out;
}

std::vector<ConnectiveEvent> connective_events(const std::vector<GenerationTrace>& traces,
                                               const ConnectiveLexicon& lexicon) {
  std::vector<ConnectiveEvent> out;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    auto ev = connective_events(traces[i], lexicon, i);
    out.insert(out.end(), ev.begin(), ev.end());
  }
  return out;
}

std::vector<bool> connective_mask(const GenerationTrace& trace, const ConnectiveLexicon& lexicon) {
  std::vector<bool> mask(trace.steps.size(), false);
  for (const auto& m : step_matches(trace, lexicon)) {
    for (std::size_t i = m.start_position(); i <= m.end_position; ++i) mask[i] = true;
  }
  return mask;
}

double high_entropy_rate(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon,
                         double tau) {
  std::size_t total = 0;
  std::size_t high = 0;
  for (const auto& t : traces) {
    for (const auto& e : connective_events(t, lexicon)) {
      ++total;
      if (e.entropy > tau) ++high;
    }
  }
  if (total == 0) throw UndefinedStatistic("high-entropy rate is undefined: no connective steps in the traces");
  return static_cast<double>(high) / static_cast<double>(total);
}

EnrichmentReport enrichment_from_percentages(double q, double base_pct, double tail_pct) {
  if (!(base_pct > 0) || base_pct > 100 || tail_pct < 0 || tail_pct > 100) {
    throw ValidationError("enrichment needs 0 < base_pct <= 100 and 0 <= tail_pct <= 100");
  }
  EnrichmentReport r;
  r.q = q;
  r.base_pct = base_pct;
  r.tail_pct = tail_pct;
  r.enrichment = tail_pct / base_pct;
  return r;
}

EnrichmentReport quantile_enrichment(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon,
                                     double q) {
  if (!(q >= 0 && q < 1)) throw ValidationError("quantile must lie in [0, 1)");
  std::vector<double> entropies;
  std::vector<bool> is_conn;
  for (const auto& t : traces) {
    const auto mask = connective_mask(t, lexicon);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      entropies.push_back(t.steps[i].entropy);
      is_conn.push_back(mask[i]);
    }
  }
  if (entropies.empty()) throw ValidationError("quantile enrichment: traces contain no steps");
  // 1/(1-q) rounds up in floating point for q like 0.9; allow that slack.
  const double needed = 1.0 / (1.0 - q) - 1e-9;
  if (static_cast<double>(entropies.size()) < needed) {
    throw ValidationError("quantile enrichment: " + std::to_string(entropies.size()) +
                          " steps are too few for q=" + std::to_string(q));
  }
  EnrichmentReport r;
  r.q = q;
  r.threshold = quantile_linear(entropies, q);
  r.total_steps = entropies.size();
  std::size_t conn = 0;
  std::size_t tail_conn = 0;
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    conn += is_conn[i];
    if (entropies[i] >= r.threshold) {
      ++r.tail_steps;
      tail_conn += is_conn[i];
    }
  }
  r.base_pct = 100.0 * static_cast<double>(conn) / static_cast<double>(r.total_steps);
  r.tail_pct = 100.0 * static_cast<double>(tail_conn) / static_cast<double>(r.tail_steps);
  if (conn == 0) throw UndefinedStatistic("quantile enrichment is undefined: no connective steps");
  r.enrichment = r.tail_pct / r.base_pct;
  return r;
}

// ---------------------------------------------------------------------------

std::string_view to_string(TokenCategory c) {
  switch (c) {
    case TokenCategory::connective: return "connective";
    case TokenCategory::negation: return "negation";
    case TokenCategory::quantifier: return "quantifier";
    case TokenCategory::number: return "number";
    case TokenCategory::punctuation: return "punctuation";
    case TokenCategory::non_connective: return "non-connective";
  }
  return "non-connective";
}

CategoryTagger::CategoryTagger()
    : negation_{"not", "no", "never", "none", "nothing", "nobody", "nowhere", "neither", "nor", "cannot",
                "without", "n't"},
      quantifier_{"all", "some", "every", "each", "any", "many", "few", "most", "several", "both", "either",
                  "much", "more", "less", "fewer", "enough"},
      number_{"zero", "one",  "two",     "three",    "four",    "five",  "six",   "seven", "eight",
              "nine", "ten",  "eleven",  "twelve",   "hundred", "thousand", "million", "first", "second",
              "third", "half", "twice", "once"} {}

CategoryTagger CategoryTagger::from_json_text(const std::string& text) {
  CategoryTagger t;
  try {
    const Json j = Json::parse(text);
    for (const auto& [key, value] : j.items()) {
      auto words = value.get<std::vector<std::string>>();
      for (auto& w : words) w = normalize_text(w);
      if (key == "negation") {
        t.negation_ = std::move(words);
      } else if (key == "quantifier") {
        t.quantifier_ = std::move(words);
      } else if (key == "number") {
        t.number_ = std::move(words);
      } else {
        throw ValidationError("category config: unknown key '" + key + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("category config: ") + e.what());
  }
  return t;
}

CategoryTagger CategoryTagger::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read category config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string CategoryTagger::to_json_text() const {
  return Json{{"negation", negation_}, {"quantifier", quantifier_}, {"number", number_}}.dump(2);
}

TokenCategory CategoryTagger::classify_word(std::string_view piece) const {
  const std::string w = normalize_text(piece);
  if (w.empty()) return TokenCategory::non_connective;
  if (contains(negation_, w)) return TokenCategory::negation;
  if (contains(quantifier_, w)) return TokenCategory::quantifier;
  const bool numeral = std::all_of(w.begin(), w.end(), [](unsigned char c) {
    return std::isdigit(c) || c == '.' || c == ',';
  }) && std::any_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); });
  if (numeral || contains(number_, w)) return TokenCategory::number;
  if (std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::ispunct(c) != 0; })) {
    return TokenCategory::punctuation;
  }
  return TokenCategory::non_connective;
}

std::vector<TokenCategory> CategoryTagger::tag(const GenerationTrace& trace, const ConnectiveLexicon& lexicon) const {
  const auto mask = connective_mask(trace, lexicon);
  std::vector<TokenCategory> out(trace.steps.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask[i] ? TokenCategory::connective : classify_word(trace.steps[i].piece);
  }
  return out;
}

void CategoryTagger::apply(GenerationTrace& trace, const ConnectiveLexicon& lexicon) const {
  const auto tags = tag(trace, lexicon);
  for (std::size_t i = 0; i < tags.size(); ++i) trace.steps[i].category = std::string(to_string(tags[i]));
}

CategorySweep category_rhe_sweep(const std::vector<GenerationTrace>& traces, const CategoryTagger& tagger,
                                 const ConnectiveLexicon& lexicon, const std::vector<double>& taus) {
  if (taus.empty()) throw ValidationError("category sweep needs at least one threshold");
  CategorySweep sweep;
  sweep.taus = taus;
  std::array<std::vector<std::size_t>, 6> above;
  for (auto& a : above) a.assign(taus.size(), 0);
  for (const auto& t : traces) {
    const auto tags = tagger.tag(t, lexicon);
    for (std::size_t i = 0; i < tags.size(); ++i) {
      const auto c = static_cast<std::size_t>(tags[i]);
      ++sweep.counts[c];
      for (std::size_t k = 0; k < taus.size(); ++k) {
        if (t.steps[i].entropy > taus[k]) ++above[c][k];
      }
    }
  }
  for (std::size_t c = 0; c < 6; ++c) {
    for (std::size_t k = 0; k < taus.size(); ++k) {
      if (sweep.counts[c] == 0) {
        sweep.rates[c].push_back(std::nullopt);
      } else {
        sweep.rates[c].push_back(static_cast<double>(above[c][k]) / static_cast<double>(sweep.counts[c]));
      }
    }
  }
  return sweep;
}

double topk_connective_presence(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon,
                                std::size_t k, double tau) {
  std::size_t qualifying = 0;
  std::size_t present = 0;
  for (const auto& t : traces) {
    for (const auto& e : connective_events(t, lexicon)) {
      if (!(e.entropy > tau)) continue;
      const auto& step = t.steps[e.first_step];
      if (step.top_k.size() < k) {
        throw ValidationError("top-K presence: K=" + std::to_string(k) + " exceeds the stored candidate width " +
                              std::to_string(step.top_k.size()));
      }
      ++qualifying;
      for (std::size_t j = 0; j < k; ++j) {
        if (step.top_k[j].first == step.token) continue;
        if (j < step.top_k_pieces.size() && is_connective_token(step.top_k_pieces[j], lexicon)) {
          ++present;
          break;
        }
      }
    }
  }
  if (qualifying == 0) {
    throw UndefinedStatistic("top-K connective presence is undefined: no high-entropy connective steps");
  }
  return static_cast<double>(present) / static_cast<double>(qualifying);
}

double connective_density(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon) {
  if (traces.empty()) throw ValidationError("connective density: no traces");
  std::size_t total = 0;
  for (const auto& t : traces) total += connective_events(t, lexicon).size();
  return static_cast<double>(total) / static_cast<double>(traces.size());
}

}  // namespace pivot
