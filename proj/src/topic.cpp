#include "condiv/topic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "condiv/lexicon.hpp"

namespace condiv {

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_number(std::string_view s) {
  bool digit = false;
  for (char c : s) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digit = true;
    } else if (c != '.' && c != ',') {
      return false;
    }
  }
  return digit;
}

const std::unordered_set<std::string_view>& verb_lexicon() {
  static const std::unordered_set<std::string_view> kVerbs = {
      "ate",   "became", "become", "began", "bought", "brought", "came", "come",   "eat",
      "eats",  "feel",   "felt",   "find",  "found",  "gave",    "give", "go",     "goes",
      "gone",  "heard",  "hear",   "keep",  "kept",   "know",    "knew", "known",  "leave",
      "left",  "like",   "likes",  "love",  "loves",  "made",    "make", "makes",  "meet",
      "met",   "play",   "plays",  "put",   "read",   "run",     "ran",  "said",   "say",
      "says",  "saw",    "see",    "seen",  "sees",   "sell",    "sold", "sent",   "sit",
      "speak", "spoke",  "take",   "takes", "taken",  "took",    "tell", "told",   "think",
      "thought", "try",  "use",    "uses",  "visit",  "visits",  "want", "wants",  "watch",
      "went",  "win",    "won",    "write", "wrote",  "written", "means"};
  return kVerbs;
}

}  // namespace

std::string_view pos_name(Pos p) {
  switch (p) {
    case Pos::noun: return "NOUN";
    case Pos::verb: return "VERB";
    case Pos::adjective: return "ADJ";
    case Pos::adverb: return "ADV";
    case Pos::function: return "FUNC";
    case Pos::number: return "NUM";
    case Pos::punct: return "PUNCT";
    case Pos::other: return "X";
  }
  return "X";
}

double pos_weight(Pos p) {
  return (p == Pos::noun || p == Pos::verb || p == Pos::adjective) ? 1.0 : 0.0;
}

Pos RuleTagger::tag_one(std::string_view t) const {
  if (t.empty() || is_special_token(t)) return Pos::other;
  if (is_punctuation(t)) return Pos::punct;
  if (is_stopword(t)) return Pos::function;
  if (is_number(t)) return Pos::number;
  if (verb_lexicon().contains(t)) return Pos::verb;
  if (t.size() > 4 && (ends_with(t, "ing") || ends_with(t, "ed"))) return Pos::verb;
  if (t.size() > 4 && ends_with(t, "ly")) return Pos::adverb;
  for (std::string_view suf : {"ous", "ful", "ive", "able", "ible", "less", "ish", "ic"})
    if (t.size() > suf.size() + 2 && ends_with(t, suf)) return Pos::adjective;
  return Pos::noun;
}

std::vector<Pos> RuleTagger::tag(std::span<const std::string> tokens) const {
  std::vector<Pos> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(tag_one(t));
  return out;
}

const PosTagger& default_tagger() {
  static const RuleTagger kTagger;
  return kTagger;
}

std::vector<double> salience_scores(std::span<const std::string> tokens, const IdfTable& idf,
                                    std::span<const Pos> tags) {
  if (tags.size() != tokens.size()) throw std::invalid_argument("one tag per token required");
  std::unordered_map<std::string_view, std::size_t> tf;
  for (const auto& t : tokens) ++tf[t];
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double w = pos_weight(tags[i]);
    out.push_back(w == 0.0 ? 0.0 : static_cast<double>(tf[tokens[i]]) * idf.idf(tokens[i]) * w);
  }
  return out;
}

std::vector<ScoredToken> rank_topic_words(std::span<const std::string> tokens, const IdfTable& idf,
                                          const PosTagger& tagger, std::size_t top_n,
                                          const Vocabulary* vocab) {
  const auto tags = tagger.tag(tokens);
  const auto scores = salience_scores(tokens, idf, tags);
  std::vector<ScoredToken> ranked;
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (scores[i] <= 0.0 || !seen.insert(tokens[i]).second) continue;
    if (vocab && !vocab->contains(tokens[i])) continue;
    ranked.push_back({tokens[i], scores[i]});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredToken& a, const ScoredToken& b) { return a.score > b.score; });
  if (ranked.size() > top_n) ranked.resize(top_n);
  return ranked;
}

Tokens extract_topic_words(std::span<const std::string> tokens, const IdfTable& idf,
                           const PosTagger& tagger, std::size_t top_n, const Vocabulary* vocab) {
  Tokens out;
  for (auto& s : rank_topic_words(tokens, idf, tagger, top_n, vocab)) out.push_back(std::move(s.token));
  return out;
}

TopicCandidates topic_candidates(const DialogueExample& example, const IdfTable& idf,
                                 const Vocabulary& vocab, const PosTagger& tagger,
                                 std::size_t top_n) {
  TopicCandidates tc;
  for (auto& s : rank_topic_words(example.joined_context, idf, tagger, top_n, &vocab)) {
    tc.context_topics.push_back(std::move(s.token));
    tc.context_scores.push_back(s.score);
  }
  Tokens all_facts;
  for (const auto& f : example.facts) all_facts.insert(all_facts.end(), f.begin(), f.end());
  for (auto& s : rank_topic_words(all_facts, idf, tagger, top_n, &vocab)) {
    tc.fact_topics.push_back(std::move(s.token));
    tc.fact_scores.push_back(s.score);
  }
  return tc;
}

// ---- drift ----------------------------------------------------------------------------

DriftIndex::DriftIndex(const Tensor& embeddings, const Vocabulary& vocab)
    : vocab_(&vocab), dim_(embeddings.shape().cols) {
  const std::size_t n = embeddings.shape().rows;
  if (n != vocab.size())
    throw ShapeError("drift index: " + std::to_string(n) + " embedding rows for a vocabulary of " +
                     std::to_string(vocab.size()));
  unit_.assign(n * dim_, 0.0);
  eligible_.assign(n, false);
  nonzero_.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = embeddings.row(i);
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      nonzero_[i] = true;
      for (std::size_t j = 0; j < dim_; ++j) unit_[i * dim_ + j] = row[j] / norm;
    }
    const auto& tok = vocab.token(static_cast<int>(i));
    eligible_[i] = nonzero_[i] && !Vocabulary::is_special(static_cast<int>(i)) && is_content_word(tok);
  }
}

std::vector<Neighbor> DriftIndex::nearest(int seed, std::size_t n) const {
  const auto s = static_cast<std::size_t>(seed);
  if (seed < 0 || s >= nonzero_.size() || !nonzero_[s] || n == 0) return {};
  const double* q = unit_.data() + s * dim_;
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < eligible_.size(); ++i) {
    if (!eligible_[i] || i == s) continue;
    const double* r = unit_.data() + i * dim_;
    double dot = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) dot += q[j] * r[j];
    all.push_back({static_cast<int>(i), std::clamp(dot, -1.0, 1.0)});
  }
  auto better = [this](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return vocab_->token(a.id) < vocab_->token(b.id);
  };
  const std::size_t k = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

DriftWords drift_words(const TopicCandidates& topics, const DriftIndex& index, std::size_t n_div) {
  DriftWords out;
  const Vocabulary& vocab = index.vocab();
  auto expand = [&](const Tokens& seeds, Tokens& words, Tokens& origin, std::vector<double>& sim) {
    for (const auto& seed : seeds) {
      if (!vocab.contains(seed)) continue;
      for (const auto& nb : index.nearest(vocab.id(seed), n_div)) {
        words.push_back(vocab.token(nb.id));
        origin.push_back(seed);
        sim.push_back(nb.similarity);
      }
    }
  };
  expand(topics.context_topics, out.contextual, out.contextual_seed, out.contextual_similarity);
  expand(topics.fact_topics, out.factual, out.factual_seed, out.factual_similarity);
  return out;
}

}  // namespace condiv
