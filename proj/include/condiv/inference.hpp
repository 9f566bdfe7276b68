#pragma once

#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "condiv/model.hpp"
#include "condiv/pipeline.hpp"

namespace condiv {

inline constexpr std::size_t kDefaultTopK = 10;
inline constexpr std::size_t kDefaultMaxLength = 32;

/// Keeps the k largest-mass entries (ties to the lower id), renormalises and
/// draws one id. Zero-mass entries are never candidates. Throws if P has no
/// positive entry or k == 0.
int top_k_sample(std::span<const double> p, std::size_t k, std::mt19937_64& rng);
/// The truncated, renormalised distribution top_k_sample draws from.
std::vector<double> top_k_distribution(std::span<const double> p, std::size_t k);

enum class Source { vocab, context, fact, drift_contextual, drift_factual };
std::string_view source_name(Source s);

/// Mass each component contributes to one token of the final distribution.
struct ComponentMasses {
  double vocab = 0.0;
  double context = 0.0;
  std::vector<double> fact;  // per fact, sentence weight already applied
  double drift_contextual = 0.0;
  double drift_factual = 0.0;

  double total() const;
};

ComponentMasses component_masses(const StepDistribution& step, int token);

struct Provenance {
  Source source = Source::vocab;
  int fact = -1;  // fact index for Source::fact
  std::string tag() const;  // "vocab", "context", "fact:K", "drift-c", "drift-f"
};

/// Argmax over the component masses; ties resolve in the order vocab,
/// context, facts by index, drift-c, drift-f.
Provenance provenance(const ComponentMasses& m);

struct GenerationRequest {
  std::vector<std::string> context;  // raw utterances, most recent last
  std::vector<std::string> facts;    // facts, or a fact pool when longer than four
  std::optional<double> beta;        // forced beta; unset means predicted
  std::size_t k = kDefaultTopK;
  std::size_t max_length = kDefaultMaxLength;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Alternative {
  std::string token;
  double probability = 0.0;
  ComponentMasses masses;
};

struct GeneratedStep {
  int id = 0;
  std::string token;
  double probability = 0.0;
  ComponentMasses masses;
  Provenance provenance;
  std::array<double, 3> lambda{};
  std::vector<double> fact_attention;  // sentence-level weights
  std::vector<Alternative> alternatives;  // top five of the final distribution
  bool renormalized = false;
};

struct GenerationResult {
  Tokens tokens;  // without <eos>
  std::string text;
  std::vector<GeneratedStep> steps;  // one per sampled token including <eos>
  double beta_predicted = 0.0;
  double beta_used = 0.0;
  bool forced = false;
  bool ended = false;  // sampled <eos> before the length cap
  std::uint64_t seed = 0;
  DriftWords drift;
  TopicCandidates topics;
  DialogueExample example;  // model input after windowing and truncation
};

/// Shared, read-only generation front end over one checkpoint.
class Generator {
 public:
  Generator(std::shared_ptr<const ModelParameters> params, Resources resources);

  GenerationResult generate(const GenerationRequest& request) const;
  /// Generation from an already prepared example (its response is ignored).
  GenerationResult generate(const DialogueExample& prompt, std::optional<double> beta, std::size_t k,
                            std::size_t max_length, std::uint64_t seed) const;

  /// Greedy decoding (k = 1) with the predicted beta.
  Tokens greedy(const DialogueExample& prompt, std::optional<double> beta = std::nullopt) const;

  const ModelParameters& parameters() const { return *params_; }
  const Resources& resources() const { return res_; }

 private:
  std::shared_ptr<const ModelParameters> params_;
  Resources res_;
};

/// Prompt example from raw strings; a pool of more than four facts is
/// narrowed by the IDF extractor.
DialogueExample make_request_example(const GenerationRequest& request, const IdfTable& idf);

struct TranscriptEntry {
  std::string speaker;  // "user" or "system"
  Tokens tokens;
  std::string text;
  std::optional<double> beta;
  std::vector<std::string> provenance;
  std::uint64_t seed = 0;
};

/// One conversation. All methods lock the session, so concurrent callers
/// are serialised.
class ChatSession {
 public:
  explicit ChatSession(std::string id, std::vector<std::string> fact_pool = {},
                       std::uint64_t seed_base = 0);

  const std::string& id() const { return id_; }

  /// Appends the user turn, generates a reply from the last six utterances
  /// and appends it. Seeds default to seed_base + turn counter. A fact pool
  /// given here replaces the session's pool under the same lock.
  GenerationResult turn(const Generator& gen, const std::string& utterance,
                        std::optional<double> beta = std::nullopt, std::size_t k = kDefaultTopK,
                        std::optional<std::uint64_t> seed = std::nullopt,
                        std::optional<std::vector<std::string>> facts = std::nullopt);

  void set_fact_pool(std::vector<std::string> facts);
  std::vector<std::string> fact_pool() const;
  std::vector<std::string> history() const;
  std::vector<TranscriptEntry> transcript() const;
  /// One JSON object per line: speaker, tokens, beta, provenance.
  std::string export_jsonl() const;

 private:
  mutable std::mutex mu_;
  std::string id_;
  std::vector<std::string> facts_;
  std::vector<std::string> history_;
  std::vector<TranscriptEntry> transcript_;
  std::uint64_t seed_base_;
  std::uint64_t turns_ = 0;
};

}  // namespace condiv
