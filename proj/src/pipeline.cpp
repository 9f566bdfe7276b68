#include "condiv/pipeline.hpp"

#include <unordered_set>

#include "condiv/lexicon.hpp"

namespace condiv {

namespace {

struct BorrowedTagger : PosTagger {
  std::vector<Pos> tag(std::span<const std::string> tokens) const override {
    return default_tagger().tag(tokens);
  }
};

}  // namespace

Resources::Resources(Vocabulary vocab, IdfTable idf, Tensor topic_embeddings, std::size_t n_div_,
                     std::size_t top_n_)
    : n_div(n_div_),
      top_n(top_n_),
      vocab_(std::make_shared<const Vocabulary>(std::move(vocab))),
      idf_(std::make_shared<const IdfTable>(std::move(idf))),
      embeddings_(std::make_shared<const Tensor>(std::move(topic_embeddings))),
      tagger_(std::make_shared<const BorrowedTagger>()) {
  index_ = std::make_shared<const DriftIndex>(*embeddings_, *vocab_);
}

SwitchPolarity parse_polarity(std::string_view s) {
  if (s == "motivated") return SwitchPolarity::motivated;
  if (s == "literal") return SwitchPolarity::literal;
  throw std::invalid_argument("unknown switch polarity '" + std::string(s) +
                              "' (expected motivated or literal)");
}

std::string_view polarity_name(SwitchPolarity p) {
  return p == SwitchPolarity::motivated ? "motivated" : "literal";
}

int switch_label(std::span<const std::string> response, std::span<const std::string> fact_topics,
                 SwitchPolarity polarity) {
  std::unordered_set<std::string_view> topics(fact_topics.begin(), fact_topics.end());
  bool overlap = false;
  for (const auto& t : response)
    if (is_content_word(t) && topics.contains(t)) overlap = true;
  if (polarity == SwitchPolarity::motivated) return overlap ? 0 : 1;
  return overlap ? 1 : 0;
}

std::vector<int> copy_labels(std::span<const std::string> targets, const DialogueExample& example,
                             const DriftWords& drift) {
  std::unordered_set<std::string_view> sources;
  for (const auto& t : example.joined_context) sources.insert(t);
  for (const auto& f : example.facts)
    for (const auto& t : f) sources.insert(t);
  for (const auto& t : drift.contextual) sources.insert(t);
  for (const auto& t : drift.factual) sources.insert(t);
  sources.erase(Vocabulary::kSepToken);
  std::vector<int> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(sources.contains(t) ? 1 : 0);
  return out;
}

PreparedExample prepare_example(const DialogueExample& example, const Resources& res,
                                SwitchPolarity polarity) {
  PreparedExample p;
  p.example = example;
  p.extended = ExtendedVocab(res.vocab(), example);
  p.topics = topic_candidates(example, res.idf(), res.vocab(), res.tagger(), res.top_n);
  p.drift = drift_words(p.topics, res.drift_index(), res.n_div);
  p.input = make_model_input(example, p.extended, res.vocab(), p.drift);
  if (!example.response.empty()) {
    p.targets.ids = target_ids(example, p.extended, res.vocab());
    Tokens with_eos = example.response;
    with_eos.emplace_back(Vocabulary::kEosToken);
    p.targets.copy_labels = copy_labels(with_eos, example, p.drift);
    p.targets.switch_label = switch_label(example.response, p.topics.fact_topics, polarity);
  }
  return p;
}

std::vector<PreparedExample> prepare_examples(std::span<const DialogueExample> examples,
                                              const Resources& res, SwitchPolarity polarity) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(prepare_example(e, res, polarity));
  return out;
}

}  // namespace condiv
