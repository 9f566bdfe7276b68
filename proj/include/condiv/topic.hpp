#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "condiv/corpus.hpp"

namespace condiv {

enum class Pos { noun, verb, adjective, adverb, function, number, punct, other };

std::string_view pos_name(Pos p);
/// 1 for nouns, verbs and adjectives; 0 otherwise.
double pos_weight(Pos p);

class PosTagger {
 public:
  virtual ~PosTagger() = default;
  virtual std::vector<Pos> tag(std::span<const std::string> tokens) const = 0;
};

/// Lexicon and suffix rules: closed-class words are function words, a small
/// verb lexicon plus -ing/-ed mark verbs, adjective suffixes mark
/// adjectives, -ly marks adverbs, and everything else is a noun.
class RuleTagger final : public PosTagger {
 public:
  std::vector<Pos> tag(std::span<const std::string> tokens) const override;
  Pos tag_one(std::string_view token) const;
};

const PosTagger& default_tagger();

/// tf(token in tokens) * idf(token) * pos_weight(tag).
std::vector<double> salience_scores(std::span<const std::string> tokens, const IdfTable& idf,
                                    std::span<const Pos> tags);

struct ScoredToken {
  std::string token;
  double score = 0.0;
};

/// Up to top_n distinct tokens with positive salience, by descending score
/// and then first occurrence. When `vocab` is given, out-of-vocabulary
/// tokens are not eligible.
std::vector<ScoredToken> rank_topic_words(std::span<const std::string> tokens, const IdfTable& idf,
                                          const PosTagger& tagger, std::size_t top_n,
                                          const Vocabulary* vocab = nullptr);
Tokens extract_topic_words(std::span<const std::string> tokens, const IdfTable& idf,
                           const PosTagger& tagger, std::size_t top_n,
                           const Vocabulary* vocab = nullptr);

inline constexpr std::size_t kDefaultTopicCount = 5;
inline constexpr std::size_t kDefaultDriftCount = 5;

struct TopicCandidates {
  Tokens context_topics;
  Tokens fact_topics;
  std::vector<double> context_scores;
  std::vector<double> fact_scores;
};

/// Context topics come from the joined context, fact topics from the
/// concatenation of all facts; both restricted to in-vocabulary tokens.
TopicCandidates topic_candidates(const DialogueExample& example, const IdfTable& idf,
                                 const Vocabulary& vocab, const PosTagger& tagger = default_tagger(),
                                 std::size_t top_n = kDefaultTopicCount);

struct Neighbor {
  int id = 0;
  double similarity = 0.0;
};

/// Exact cosine nearest neighbours over the vocabulary rows of an embedding
/// matrix. Specials, stopwords, punctuation and zero-norm rows are never
/// returned.
class DriftIndex {
 public:
  DriftIndex(const Tensor& embeddings, const Vocabulary& vocab);

  /// Up to n neighbours of `seed`, excluding the seed itself, sorted by
  /// descending similarity with ties broken by token string.
  std::vector<Neighbor> nearest(int seed, std::size_t n) const;
  const Vocabulary& vocab() const { return *vocab_; }

 private:
  const Vocabulary* vocab_;
  std::size_t dim_;
  std::vector<double> unit_;      // row-normalized copy
  std::vector<bool> eligible_;
  std::vector<bool> nonzero_;
};

struct DriftWords {
  Tokens contextual;
  Tokens factual;
  Tokens contextual_seed;  // origin of contextual[i]
  Tokens factual_seed;
  std::vector<double> contextual_similarity;
  std::vector<double> factual_similarity;
};

DriftWords drift_words(const TopicCandidates& topics, const DriftIndex& index,
                       std::size_t n_div = kDefaultDriftCount);

}  // namespace condiv
