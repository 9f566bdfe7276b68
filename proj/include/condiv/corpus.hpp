#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "condiv/tensor.hpp"

namespace condiv {

using Tokens = std::vector<std::string>;

/// Raised for malformed input files; the message carries the line number.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- limits -------------------------------------------------------------------

inline constexpr std::size_t kMaxContextUtterances = 6;
inline constexpr std::size_t kMaxContextTokens = 32;
inline constexpr std::size_t kMaxFacts = 4;
inline constexpr std::size_t kMaxFactTokens = 50;
inline constexpr std::size_t kMaxResponseTokens = 32;
inline constexpr std::size_t kDefaultVocabSize = 30000;
inline constexpr std::size_t kDefaultEmbedDim = 300;

/// Lowercases ASCII, splits on whitespace and emits each punctuation mark as
/// its own token. '-' and '\'' stay inside a word when flanked by word bytes.
Tokens tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

// ---- vocabulary -----------------------------------------------------------------

struct DialogueExample;

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;
  static constexpr int kNumSpecials = 5;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kSosToken = "<sos>";
  static constexpr std::string_view kEosToken = "<eos>";
  static constexpr std::string_view kSepToken = "<sep>";

  Vocabulary();

  /// Keeps the max_size most frequent tokens (ties lexicographic) on top of
  /// the reserved specials. Throws std::invalid_argument on an empty corpus.
  static Vocabulary build(std::span<const DialogueExample> examples,
                          std::size_t max_size = kDefaultVocabSize);
  static Vocabulary from_counts(const std::unordered_map<std::string, std::size_t>& counts,
                                std::size_t max_size = kDefaultVocabSize);

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  std::vector<int> encode(std::span<const std::string> tokens) const;

  /// "condiv-vocab v1" header, then "token<TAB>count" per line in id order.
  void save(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(std::istream& is);
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void add(std::string token, std::size_t count);

  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, int> index_;
};

// ---- embeddings -------------------------------------------------------------------

struct EmbeddingTable {
  Tensor matrix;               // [vocab x dim]
  std::vector<bool> covered;   // row came from the pre-trained file
  std::size_t dim() const { return matrix.shape().cols; }
  /// Fraction of non-special rows that came from the file.
  double coverage() const;
};

/// Every row drawn uniformly from [-0.1, 0.1] in id order from `seed`.
EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed);

/// Reads "token v1 ... v_dim" lines. Tokens outside the vocabulary are
/// ignored; uncovered rows keep their seeded random values.
EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                               std::size_t dim = kDefaultEmbedDim, std::uint64_t seed = 1);
EmbeddingTable load_embeddings(std::istream& is, const Vocabulary& vocab,
                               std::size_t dim = kDefaultEmbedDim, std::uint64_t seed = 1);

// ---- IDF ---------------------------------------------------------------------------

class IdfTable {
 public:
  IdfTable() = default;
  static IdfTable build(std::span<const Tokens> documents);

  /// ln((1 + N) / (1 + df)) + 1; unseen tokens use df = 0.
  double idf(std::string_view token) const;
  std::size_t df(std::string_view token) const;
  std::size_t document_count() const { return n_docs_; }

  /// "condiv-idf v1", then the document count, then "token<TAB>df" sorted.
  void save(const std::filesystem::path& path) const;
  void save(std::ostream& os) const;
  static IdfTable load(const std::filesystem::path& path);
  static IdfTable load(std::istream& is);

 private:
  std::unordered_map<std::string, std::size_t> df_;
  std::size_t n_docs_ = 0;
};

/// Score of each pool sentence: sum of IDF over distinct token types it shares
/// with the context. Returns indices into the pool of the top `max_facts`
/// sentences by descending score, ties in pool order.
std::vector<std::size_t> extract_facts(std::span<const Tokens> context,
                                       std::span<const Tokens> fact_pool, const IdfTable& idf,
                                       std::size_t max_facts = kMaxFacts);
double fact_score(std::span<const Tokens> context, const Tokens& fact, const IdfTable& idf);

// ---- examples -------------------------------------------------------------------------

struct DialogueExample {
  std::vector<Tokens> context_utterances;  // most recent last, at most six
  Tokens joined_context;                   // utterances joined by <sep>, last 32 tokens
  std::vector<Tokens> facts;               // at most four, each at most 50 tokens
  Tokens response;                         // at most 32 tokens

  bool operator==(const DialogueExample&) const = default;
};

/// Raw record as stored in a dataset line.
struct DialogueRecord {
  std::vector<std::string> context;
  std::vector<std::string> facts;
  std::string response;
};

/// Applies the six-utterance window, then the 32-token cap (keeping the most
/// recent tokens, <sep> included), the first four facts capped at 50 tokens,
/// and the first 32 response tokens. Throws std::invalid_argument if the
/// context or the response is empty.
DialogueExample make_example(std::span<const std::string> context,
                             std::span<const std::string> facts, std::string_view response);
/// Same as make_example without a response (inference prompts).
DialogueExample make_prompt(std::span<const std::string> context,
                            std::span<const std::string> facts);

/// Runs extract_facts over the record's fact pool when it exceeds four
/// sentences, then make_example.
DialogueExample prepare_record(const DialogueRecord& record, const IdfTable& idf);

/// One JSON object per line: {"context": [...], "facts": [...], "response": "..."}.
std::vector<DialogueRecord> read_dataset(const std::filesystem::path& path);
std::vector<DialogueRecord> read_dataset(std::istream& is);
void write_dataset(const std::filesystem::path& path, std::span<const DialogueRecord> records);

/// Documents used for IDF: every utterance, fact and response.
std::vector<Tokens> idf_documents(std::span<const DialogueExample> examples);
/// Same over raw records, so whole fact pools count before extraction.
std::vector<Tokens> idf_documents(std::span<const DialogueRecord> records);

// ---- extended vocabulary and batching ---------------------------------------------------

/// Source tokens outside the vocabulary, sorted, mapped to vocab.size() + rank.
class ExtendedVocab {
 public:
  ExtendedVocab() = default;
  ExtendedVocab(const Vocabulary& vocab, const DialogueExample& example);

  std::size_t base() const { return base_; }
  std::size_t size() const { return base_ + oov_.size(); }
  const std::vector<std::string>& oov_tokens() const { return oov_; }

  /// Vocabulary id, else extended id, else UNK.
  int id(std::string_view token, const Vocabulary& vocab) const;
  std::string token(int id, const Vocabulary& vocab) const;
  std::vector<int> encode(std::span<const std::string> tokens, const Vocabulary& vocab) const;

 private:
  std::size_t base_ = 0;
  std::vector<std::string> oov_;
};

struct Batch {
  std::size_t size = 0;
  std::vector<std::vector<int>> context;               // [B][max I], PAD padded
  std::vector<std::vector<bool>> context_mask;
  std::vector<std::vector<std::vector<int>>> facts;    // [B][max K][max J]
  std::vector<std::vector<std::vector<bool>>> fact_mask;
  std::vector<std::size_t> fact_count;
  std::vector<std::vector<int>> response;              // [B][max T]
  std::vector<std::vector<bool>> response_mask;
  std::vector<ExtendedVocab> extended;
};

Batch make_batch(std::span<const DialogueExample> examples, const Vocabulary& vocab);
std::vector<Batch> make_batches(std::span<const DialogueExample> examples, const Vocabulary& vocab,
                                std::size_t batch_size = 64);

}  // namespace condiv
