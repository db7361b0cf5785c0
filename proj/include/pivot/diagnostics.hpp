#pragma once

/**
 * Entropy statistics over collections of generation traces.
 *
 * Connective events are re-derived from the stored step pieces with the given
 * lexicon. A multi-token phrase is one event whose entropy is the entropy at
 * its first token; every step it covers is tagged `connective` for
 * per-category statistics.
 */

#include "pivot/decode.hpp"
#include "pivot/lexicon.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace pivot {

struct ConnectiveEvent {
  std::size_t trace = 0;
  std::size_t first_step = 0;
  std::size_t last_step = 0;
  ConnectivePhrase phrase;
  double entropy = 0.0;
};

std::vector<ConnectiveEvent> connective_events(const GenerationTrace& trace, const ConnectiveLexicon& lexicon,
                                               std::size_t trace_index = 0);
std::vector<ConnectiveEvent> connective_events(const std::vector<GenerationTrace>& traces,
                                               const ConnectiveLexicon& lexicon);

/// Per-step connective mask (true for every step covered by a match).
std::vector<bool> connective_mask(const GenerationTrace& trace, const ConnectiveLexicon& lexicon);

/// Fraction of connective events with entropy strictly above `tau`.
/// Throws UndefinedStatistic when there are no connective events.
double high_entropy_rate(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon,
                         double tau);

struct EnrichmentReport {
  double q = 0.0;
  double threshold = 0.0;  // entropy quantile H_q (nats)
  double base_pct = 0.0;
  double tail_pct = 0.0;
  double enrichment = 0.0;
  std::size_t total_steps = 0;
  std::size_t tail_steps = 0;
};

/// Enrichment from published percentages.
EnrichmentReport enrichment_from_percentages(double q, double base_pct, double tail_pct);

EnrichmentReport quantile_enrichment(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon,
                                     double q);

enum class TokenCategory { connective, negation, quantifier, number, punctuation, non_connective };

inline constexpr std::array<TokenCategory, 6> kTokenCategories = {
    TokenCategory::connective, TokenCategory::negation,    TokenCategory::quantifier,
    TokenCategory::number,     TokenCategory::punctuation, TokenCategory::non_connective,
};

std::string_view to_string(TokenCategory c);

/**
 * Assigns each step one category, in priority order connective, negation,
 * quantifier, number, punctuation, non-connective. Word lists are editable
 * through a JSON config: {"negation": [...], "quantifier": [...], "number": [...]}.
 * Punctuation is any token made only of punctuation characters; numerals are
 * always numbers.
 */
class CategoryTagger {
 public:
  CategoryTagger();
  static CategoryTagger from_json_text(const std::string& text);
  static CategoryTagger load(const std::string& path);
  std::string to_json_text() const;

  TokenCategory classify_word(std::string_view piece) const;
  std::vector<TokenCategory> tag(const GenerationTrace& trace, const ConnectiveLexicon& lexicon) const;
  /// Writes category names into the step records.
  void apply(GenerationTrace& trace, const ConnectiveLexicon& lexicon) const;

 private:
  std::vector<std::string> negation_;
  std::vector<std::string> quantifier_;
  std::vector<std::string> number_;
};

struct CategorySweep {
  std::vector<double> taus;
  /// rates[category][tau index]; nullopt where the category has no steps.
  std::array<std::vector<std::optional<double>>, 6> rates;
  std::array<std::size_t, 6> counts{};
};

CategorySweep category_rhe_sweep(const std::vector<GenerationTrace>& traces, const CategoryTagger& tagger,
                                 const ConnectiveLexicon& lexicon, const std::vector<double>& taus);

/// Among connective events with entropy above `tau`, the fraction whose first
/// step keeps at least one other connective token in its top-K candidates.
double topk_connective_presence(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon,
                                std::size_t k, double tau = 1.0);

/// Mean number of connective events per trace.
double connective_density(const std::vector<GenerationTrace>& traces, const ConnectiveLexicon& lexicon);

/// True when the piece (trimmed, normalized) is itself a lexicon phrase.
bool is_connective_token(std::string_view piece, const ConnectiveLexicon& lexicon);

}  // namespace pivot
