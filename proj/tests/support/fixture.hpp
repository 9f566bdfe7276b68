#pragma once

// Small synthetic corpus prepared end to end, for tests that train.

#include "condiv/synthetic.hpp"
#include "condiv/training.hpp"

namespace fixture {

using namespace condiv;

struct Small {
  SyntheticCorpus corpus;
  std::vector<DialogueExample> train, dev, heldout;
  Vocabulary vocab;
  EmbeddingTable emb;
  IdfTable idf;
  Resources res;
  std::vector<PreparedExample> ptrain, pdev;
  TrainConfig cfg;
};

inline std::vector<DialogueExample> examples(const std::vector<DialogueRecord>& recs) {
  std::vector<DialogueExample> out;
  for (const auto& r : recs) out.push_back(make_example(r.context, r.facts, r.response));
  return out;
}

inline Small small(std::size_t train_pairs = 20, std::size_t dim = 8) {
  Small s;
  s.corpus = make_synthetic_corpus(3, train_pairs, 10, 5, dim);
  s.train = examples(s.corpus.train);
  s.dev = examples(s.corpus.dev);
  s.heldout = examples(s.corpus.heldout);
  s.vocab = Vocabulary::build(s.train);
  s.emb = synthetic_embeddings(s.corpus, s.vocab, 1);
  s.idf = IdfTable::build(idf_documents(std::span<const DialogueRecord>(s.corpus.train)));
  s.res = Resources(s.vocab, s.idf, s.emb.matrix);
  s.ptrain = prepare_examples(s.train, s.res);
  s.pdev = prepare_examples(s.dev, s.res);
  s.cfg.hidden = dim;
  s.cfg.embed_dim = dim;
  s.cfg.learning_rate = 0.01;
  s.cfg.batch_size = 5;
  s.cfg.max_epochs = 2;
  s.cfg.precision = Precision::f64;
  return s;
}

inline bool same_values(const ModelParameters& a, const ModelParameters& b) {
  auto pa = a.all();
  auto pb = b.all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->value.vec() != pb[i]->value.vec()) return false;
  return true;
}

}  // namespace fixture
