#pragma once

// Per-example preparation shared by training and inference: topic
// candidates, drift words, extended ids and supervision labels.

#include <memory>

#include "condiv/corpus.hpp"
#include "condiv/model.hpp"
#include "condiv/topic.hpp"

namespace condiv {

/// Immutable artifacts needed to turn a dialogue into model input. Copies
/// share the underlying tables.
class Resources {
 public:
  Resources() = default;
  Resources(Vocabulary vocab, IdfTable idf, Tensor topic_embeddings,
            std::size_t n_div = kDefaultDriftCount, std::size_t top_n = kDefaultTopicCount);

  const Vocabulary& vocab() const { return *vocab_; }
  const IdfTable& idf() const { return *idf_; }
  const Tensor& topic_embeddings() const { return *embeddings_; }
  const DriftIndex& drift_index() const { return *index_; }
  const PosTagger& tagger() const { return *tagger_; }
  void set_tagger(std::shared_ptr<const PosTagger> tagger) { tagger_ = std::move(tagger); }

  std::size_t n_div = kDefaultDriftCount;
  std::size_t top_n = kDefaultTopicCount;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::shared_ptr<const IdfTable> idf_;
  std::shared_ptr<const Tensor> embeddings_;
  std::shared_ptr<const DriftIndex> index_;
  std::shared_ptr<const PosTagger> tagger_;
};

enum class SwitchPolarity {
  motivated,  // response overlaps fact topics -> 0 (convergent)
  literal,    // response overlaps fact topics -> 1
};

SwitchPolarity parse_polarity(std::string_view s);
std::string_view polarity_name(SwitchPolarity p);

/// Label for the switcher. Under the motivated polarity a response whose
/// content words hit the fact topic words is convergent (0); everything else,
/// including examples without facts, is divergent (1). The literal polarity
/// swaps the two outcomes.
int switch_label(std::span<const std::string> response, std::span<const std::string> fact_topics,
                 SwitchPolarity polarity = SwitchPolarity::motivated);

/// 1 where the target token occurs in any copy source (context, facts and
/// both drift lists), else 0. `targets` includes the trailing <eos>.
std::vector<int> copy_labels(std::span<const std::string> targets, const DialogueExample& example,
                             const DriftWords& drift);

struct PreparedExample {
  DialogueExample example;
  ExtendedVocab extended;
  TopicCandidates topics;
  DriftWords drift;
  ModelInput input;
  Targets targets;  // empty ids for prompts
};

PreparedExample prepare_example(const DialogueExample& example, const Resources& res,
                                SwitchPolarity polarity = SwitchPolarity::motivated);
std::vector<PreparedExample> prepare_examples(std::span<const DialogueExample> examples,
                                              const Resources& res,
                                              SwitchPolarity polarity = SwitchPolarity::motivated);

}  // namespace condiv
