#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "condiv/corpus.hpp"

namespace condiv {

/// Corpus BLEU-4 in percent: uniform weights over clipped 1..4-gram
/// precisions, brevity penalty from total lengths. A zero precision is
/// replaced by 1e-9 unless no unigram matches at all, which scores 0.
double bleu4(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

/// 100 * distinct n-grams / total n-grams across all hypotheses; 0 when
/// there are no n-grams.
double distinct_n(std::span<const Tokens> hypotheses, std::size_t n);

/// Presence counts over (source, response) pairs, content words only.
class PmiTable {
 public:
  PmiTable() = default;

  /// x ranges over content words of the context and facts, y over content
  /// words of the response; each is counted once per pair.
  static PmiTable build(std::span<const DialogueExample> pairs);

  std::size_t pairs() const { return n_; }
  std::size_t source_count(const std::string& x) const;
  std::size_t response_count(const std::string& y) const;
  std::size_t joint_count(const std::string& x, const std::string& y) const;

  /// log2(N c(x,y) / (c(x) c(y))) when c(x,y) > 0, else 0.
  double pmi(const std::string& x, const std::string& y) const;

  /// "condiv-pmi v1", the pair total, then sorted "x"/"y"/"xy" count lines.
  void save(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  static PmiTable load(std::istream& is);
  static PmiTable load(const std::filesystem::path& path);

  const std::map<std::string, std::size_t>& sources() const { return cx_; }
  const std::map<std::string, std::size_t>& responses() const { return cy_; }
  const std::map<std::pair<std::string, std::string>, std::size_t>& joints() const { return cxy_; }

 private:
  std::size_t n_ = 0;
  std::map<std::string, std::size_t> cx_, cy_;
  std::map<std::pair<std::string, std::string>, std::size_t> cxy_;
};

/// (1/T) sum_t max(0, max over content x of PMI(x, y_t)); non-content
/// response tokens contribute 0. Throws on an empty response.
double pmi_score(std::span<const std::string> response, std::span<const Tokens> context,
                 std::span<const Tokens> facts, const PmiTable& table);

struct EvalReport {
  double bleu = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  double pmi = 0.0;
  bool has_pmi = false;
  std::size_t pairs = 0;

  std::string to_json() const;
};

}  // namespace condiv
