#pragma once

// Small fact-grounded corpus with planted word vectors, for overfitting and
// switcher experiments. City names come in twin pairs whose vectors are
// nearly parallel, so each city's first drift word is its twin.
//
// Foods pair up the same way. Convergent dialogues carry two facts naming a
// food pair and answer with the famous dish of the pair; divergent dialogues carry unrelated sports facts and answer by
// suggesting the twin city. Both answers are built from stopwords around the
// copyable slots, because the decoder state never sees the facts directly.

#include <filesystem>
#include <string>
#include <vector>

#include "condiv/corpus.hpp"

namespace condiv {

struct SyntheticCorpus {
  std::vector<DialogueRecord> train;
  std::vector<DialogueRecord> dev;      // unseen combinations, both kinds
  std::vector<DialogueRecord> heldout;  // unseen convergent prompts with references
  std::vector<int> train_kind;          // 0 convergent, 1 divergent
  std::vector<int> dev_kind;
  std::vector<std::string> words;
  std::vector<std::vector<double>> vectors;  // one per word
};

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, std::size_t train_pairs = 100,
                                      std::size_t dev_pairs = 40, std::size_t heldout_pairs = 20,
                                      std::size_t dim = 32);

/// Embedding table for `vocab` with the planted vectors; tokens without a
/// planted vector (specials) get seeded random rows.
EmbeddingTable synthetic_embeddings(const SyntheticCorpus& corpus, const Vocabulary& vocab,
                                    std::uint64_t seed);

/// Writes "token v1 ... v_dim" lines.
void write_embedding_file(const std::filesystem::path& path, const SyntheticCorpus& corpus);

}  // namespace condiv
