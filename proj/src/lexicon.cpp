#include "pivot/lexicon.hpp"

#include "pivot/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace pivot {
namespace {

constexpr std::array<std::string_view, kRelationClassCount> kClassNames = {
    "Conjunction", "Alternative", "Restatement", "Instantiation", "Contrast",
    "Concession",  "Analogy",     "Temporal",    "Condition",     "Causal",
};

// Ten-class connective taxonomy. Phrases are kept exactly as published,
// including the "an as instance" entry.
constexpr std::string_view kBuiltinLexicon = R"(# Logical connective taxonomy (ten relation classes).
[Conjunction]
as well as
as well
also
separately

[Alternative]
either
instead
alternatively
else
neither

[Restatement]
specifically
particularly
in particular
besides
additionally
in addition
moreover
furthermore
plus
not only
indeed
in other words
in fact
in short
in the end
overall
in summary
in details

[Instantiation]
for example
for instance
such as
including
as an example
an as instance
for one thing

[Contrast]
but
however
yet
while
unlike
rather
rather than
in comparison
by comparison
on the other hand
on the contrary
contrary to
in contrast
by contrast
whereas
conversely

[Concession]
although
though
despite
despite of
in spite of
regardless
regardless of
nevertheless
nonetheless
even if
even though
even as
even when
even after
even so
no matter

[Analogy]
likewise
similarly
as if
as though
just as
just like
namely

[Temporal]
during
before
after
when
as soon as
then
next
until
till
meanwhile
in turn
meantime
afterwards
simultaneously
at the same time
beforehand
previously
earlier
later
thereafter
finally
ultimately

[Condition]
if
as long as
unless
otherwise
except
whenever
whichever
once
only if
only when
depend on

[Causal]
because
cause
as a result
result in
due to
therefore
hence
thus
thereby
since
now that
consequently
in consequence
in order to
so as to
so that
why
for
accordingly
given
turn out
)";

// High-frequency coordinators that are never admitted as connectives.
constexpr std::array<std::string_view, 2> kExcluded = {"and", "or"};

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

const std::array<RelationClass, kRelationClassCount>& all_relation_classes() {
  static const std::array<RelationClass, kRelationClassCount> all = {
      RelationClass::Conjunction, RelationClass::Alternative, RelationClass::Restatement,
      RelationClass::Instantiation, RelationClass::Contrast, RelationClass::Concession,
      RelationClass::Analogy, RelationClass::Temporal, RelationClass::Condition,
      RelationClass::Causal,
  };
  return all;
}

std::string_view to_string(RelationClass c) {
  return kClassNames[static_cast<std::size_t>(c)];
}

std::optional<RelationClass> relation_class_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == name) return static_cast<RelationClass>(i);
  }
  return std::nullopt;
}

std::size_t ConnectivePhrase::word_count() const {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : surface) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

ConnectiveLexicon::ConnectiveLexicon(std::vector<ConnectivePhrase> phrases) {
  for (auto& p : phrases) {
    if (p.surface.empty() || trim(p.surface) != p.surface) {
      throw ValidationError("connective phrase must be non-empty without surrounding whitespace: '" +
                            p.surface + "'");
    }
    const std::string key = normalize_text(p.surface);
    if (key != p.surface) {
      throw ValidationError("connective phrase must be lowercase with single spaces: '" +
                            p.surface + "'");
    }
    if (std::find(kExcluded.begin(), kExcluded.end(), key) != kExcluded.end()) {
      throw ValidationError("'" + key + "' is an excluded coordinator and cannot be a connective");
    }
    if (auto it = index_.find(key); it != index_.end()) {
      const auto& prev = phrases_[it->second];
      throw ValidationError("duplicate connective '" + key + "' (classes " +
                            std::string(to_string(prev.relation)) + " and " +
                            std::string(to_string(p.relation)) + ")");
    }
    index_.emplace(key, phrases_.size());
    max_words_ = std::max(max_words_, p.word_count());
    phrases_.push_back(std::move(p));
  }
}

ConnectiveLexicon ConnectiveLexicon::builtin() {
  static const ConnectiveLexicon lex = parse(kBuiltinLexicon);
  return lex;
}

ConnectiveLexicon ConnectiveLexicon::parse(std::string_view text) {
  std::vector<ConnectivePhrase> phrases;
  std::optional<RelationClass> current;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ValidationError("lexicon line " + std::to_string(line_no) + ": malformed section header");
      }
      const std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
      current = relation_class_from_string(name);
      if (!current) {
        throw ValidationError("lexicon line " + std::to_string(line_no) + ": unknown class '" + name + "'");
      }
      continue;
    }
    if (!current) {
      throw ValidationError("lexicon line " + std::to_string(line_no) + ": phrase before any [Class] header");
    }
    phrases.push_back({normalize_text(line), *current});
  }
  return ConnectiveLexicon(std::move(phrases));
}

ConnectiveLexicon ConnectiveLexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read lexicon file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ConnectiveLexicon::serialize() const {
  std::string out;
  for (RelationClass c : all_relation_classes()) {
    const auto members = phrases_in(c);
    if (members.empty()) continue;
    if (!out.empty()) out += '\n';
    out += '[';
    out += to_string(c);
    out += "]\n";
    for (const auto& p : members) {
      out += p.surface;
      out += '\n';
    }
  }
  return out;
}

const ConnectivePhrase* ConnectiveLexicon::find(std::string_view text) const {
  auto it = index_.find(normalize_text(text));
  return it == index_.end() ? nullptr : &phrases_[it->second];
}

std::vector<ConnectivePhrase> ConnectiveLexicon::phrases_in(RelationClass c) const {
  std::vector<ConnectivePhrase> out;
  for (const auto& p : phrases_) {
    if (p.relation == c) out.push_back(p);
  }
  return out;
}

bool same_class(const ConnectivePhrase& a, const ConnectivePhrase& b) {
  return a.relation == b.relation;
}

std::optional<ConnectiveMatch> match_suffix(std::span<const int> recent_tokens,
                                            const Detokenizer& detokenize,
                                            const ConnectiveLexicon& lexicon) {
  const std::size_t n = recent_tokens.size();
  if (n == 0) return std::nullopt;
  const std::size_t window = std::min(n, lexicon.window_tokens());
  const std::size_t first_owned = n - window;
  // One extra token of left context decides the word boundary at the window edge.
  const std::size_t lo = first_owned > 0 ? first_owned - 1 : 0;

  // Normalized text with, per character, the index of the token it came from.
  std::string text;
  std::vector<std::size_t> owner;
  bool pending_space = false;
  std::size_t pending_owner = 0;
  for (std::size_t t = lo; t < n; ++t) {
    for (char c : detokenize(recent_tokens[t])) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!pending_space) pending_owner = t;
        pending_space = !text.empty();
        continue;
      }
      if (pending_space) {
        text.push_back(' ');
        owner.push_back(pending_owner);
      }
      pending_space = false;
      text.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      owner.push_back(t);
    }
  }
  if (text.empty()) return std::nullopt;

  const ConnectivePhrase* best = nullptr;
  std::size_t best_start = 0;
  for (const auto& p : lexicon.phrases()) {
    const std::string& s = p.surface;
    if (s.size() > text.size()) continue;
    const std::size_t start = text.size() - s.size();
    if (text.compare(start, s.size(), s) != 0) continue;
    if (start > 0 && is_word_char(text[start - 1])) continue;
    if (owner[start] < first_owned) continue;
    if (best == nullptr || s.size() > best->surface.size()) {
      best = &p;
      best_start = start;
    }
  }
  if (best == nullptr) return std::nullopt;
  return ConnectiveMatch{*best, n - 1, n - owner[best_start]};
}

std::vector<ConnectiveMatch> annotate_connectives(std::span<const int> tokens,
                                                  const Detokenizer& detokenize,
                                                  const ConnectiveLexicon& lexicon,
                                                  std::size_t first_index) {
  std::vector<ConnectiveMatch> out;
  for (std::size_t i = first_index; i < tokens.size(); ++i) {
    auto m = match_suffix(tokens.first(i + 1), detokenize, lexicon);
    if (!m || m->start_position() < first_index) continue;
    if (!out.empty() && out.back().end_position >= m->start_position()) {
      // Overlap: a match that extends the previous one to the left supersedes it.
      if (m->start_position() <= out.back().start_position()) out.back() = *m;
      continue;
    }
    out.push_back(*m);
  }
  return out;
}

}  // namespace pivot
