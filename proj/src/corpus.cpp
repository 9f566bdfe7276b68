#include "condiv/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "condiv/lexicon.hpp"

namespace condiv {

namespace {

bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c); }

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void expect_header(std::istream& is, std::string_view header) {
  std::string line;
  if (!std::getline(is, line) || line != header)
    throw FormatError("line 1: expected header \"" + std::string(header) + "\"");
}

}  // namespace

// ---- tokenizer -----------------------------------------------------------------

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if ((c == '-' || c == '\'') && !cur.empty() && i + 1 < text.size() &&
               is_word_byte(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back(static_cast<char>(c));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---- vocabulary ------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (auto t : {kPadToken, kUnkToken, kSosToken, kEosToken, kSepToken}) add(std::string(t), 0);
}

void Vocabulary::add(std::string token, std::size_t count) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
}

Vocabulary Vocabulary::from_counts(const std::unordered_map<std::string, std::size_t>& counts,
                                   std::size_t max_size) {
  std::vector<std::pair<std::string, std::size_t>> ranked;
  ranked.reserve(counts.size());
  for (const auto& [tok, n] : counts)
    if (!is_special_token(tok)) ranked.emplace_back(tok, n);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > max_size) ranked.resize(max_size);
  Vocabulary v;
  for (auto& [tok, n] : ranked) v.add(std::move(tok), n);
  return v;
}

Vocabulary Vocabulary::build(std::span<const DialogueExample> examples, std::size_t max_size) {
  if (examples.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& ex : examples) {
    for (const auto& t : ex.joined_context) ++counts[t];
    for (const auto& f : ex.facts)
      for (const auto& t : f) ++counts[t];
    for (const auto& t : ex.response) ++counts[t];
  }
  return from_counts(counts, max_size);
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

void Vocabulary::save(std::ostream& os) const {
  os << "condiv-vocab v1\n";
  for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << counts_[i] << '\n';
}

void Vocabulary::save(const std::filesystem::path& path) const {
  auto out = open_output(path);
  save(out);
}

Vocabulary Vocabulary::load(std::istream& is) {
  expect_header(is, "condiv-vocab v1");
  Vocabulary v;
  v.tokens_.clear();
  v.counts_.clear();
  v.index_.clear();
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    std::size_t count = 0;
    if (tab == std::string::npos ||
        std::from_chars(line.data() + tab + 1, line.data() + line.size(), count).ec != std::errc())
      throw FormatError("vocab line " + std::to_string(lineno) + ": expected token<TAB>count");
    v.add(line.substr(0, tab), count);
  }
  if (v.size() < kNumSpecials || v.token(kPad) != kPadToken || v.token(kUnk) != kUnkToken ||
      v.token(kSos) != kSosToken || v.token(kEos) != kEosToken || v.token(kSep) != kSepToken)
    throw FormatError("vocab: reserved ids 0-4 must be <pad> <unk> <sos> <eos> <sep>");
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto in = open_input(path);
  return load(in);
}

// ---- embeddings -------------------------------------------------------------------

double EmbeddingTable::coverage() const {
  std::size_t total = 0, hit = 0;
  for (std::size_t i = Vocabulary::kNumSpecials; i < covered.size(); ++i) {
    ++total;
    hit += covered[i] ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable t;
  t.matrix = Tensor({vocab.size(), dim});
  t.covered.assign(vocab.size(), false);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (double& v : t.matrix.values()) v = dist(rng);
  return t;
}

EmbeddingTable load_embeddings(std::istream& is, const Vocabulary& vocab, std::size_t dim,
                               std::uint64_t seed) {
  EmbeddingTable t = random_embeddings(vocab, dim, seed);
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> row;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string token, field;
    fields >> token;
    row.clear();
    while (fields >> field) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end != field.c_str() + field.size() || !std::isfinite(v))
        throw FormatError("embeddings line " + std::to_string(lineno) + ": non-numeric value \"" +
                          field + "\"");
      row.push_back(v);
    }
    if (row.size() != dim)
      throw FormatError("embeddings line " + std::to_string(lineno) + ": expected " +
                        std::to_string(dim) + " values, found " + std::to_string(row.size()));
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.id(token));
    std::copy(row.begin(), row.end(), t.matrix.data() + id * dim);
    t.covered[id] = true;
  }
  return t;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                               std::size_t dim, std::uint64_t seed) {
  auto in = open_input(path);
  return load_embeddings(in, vocab, dim, seed);
}

// ---- IDF ---------------------------------------------------------------------------

IdfTable IdfTable::build(std::span<const Tokens> documents) {
  IdfTable t;
  t.n_docs_ = documents.size();
  for (const auto& doc : documents) {
    std::set<std::string_view> seen(doc.begin(), doc.end());
    for (auto tok : seen) ++t.df_[std::string(tok)];
  }
  return t;
}

std::size_t IdfTable::df(std::string_view token) const {
  auto it = df_.find(std::string(token));
  return it == df_.end() ? 0 : it->second;
}

double IdfTable::idf(std::string_view token) const {
  return std::log((1.0 + static_cast<double>(n_docs_)) / (1.0 + static_cast<double>(df(token)))) +
         1.0;
}

void IdfTable::save(std::ostream& os) const {
  os << "condiv-idf v1\n" << n_docs_ << '\n';
  std::map<std::string_view, std::size_t> sorted(df_.begin(), df_.end());
  for (const auto& [tok, n] : sorted) os << tok << '\t' << n << '\n';
}

void IdfTable::save(const std::filesystem::path& path) const {
  auto out = open_output(path);
  save(out);
}

IdfTable IdfTable::load(std::istream& is) {
  expect_header(is, "condiv-idf v1");
  IdfTable t;
  std::string line;
  if (!std::getline(is, line) ||
      std::from_chars(line.data(), line.data() + line.size(), t.n_docs_).ec != std::errc())
    throw FormatError("idf line 2: expected document count");
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    std::size_t n = 0;
    if (tab == std::string::npos ||
        std::from_chars(line.data() + tab + 1, line.data() + line.size(), n).ec != std::errc())
      throw FormatError("idf line " + std::to_string(lineno) + ": expected token<TAB>df");
    t.df_[line.substr(0, tab)] = n;
  }
  return t;
}

IdfTable IdfTable::load(const std::filesystem::path& path) {
  auto in = open_input(path);
  return load(in);
}

// ---- fact extraction -------------------------------------------------------------------

double fact_score(std::span<const Tokens> context, const Tokens& fact, const IdfTable& idf) {
  std::set<std::string_view> ctx;
  for (const auto& utt : context)
    for (const auto& t : utt)
      if (!is_special_token(t)) ctx.insert(t);
  std::set<std::string_view> shared;
  for (const auto& t : fact)
    if (ctx.contains(t)) shared.insert(t);
  double score = 0.0;
  for (auto t : shared) score += idf.idf(t);
  return score;
}

std::vector<std::size_t> extract_facts(std::span<const Tokens> context,
                                       std::span<const Tokens> fact_pool, const IdfTable& idf,
                                       std::size_t max_facts) {
  std::vector<double> scores;
  scores.reserve(fact_pool.size());
  for (const auto& f : fact_pool) scores.push_back(fact_score(context, f, idf));
  std::vector<std::size_t> order(fact_pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (order.size() > max_facts) order.resize(max_facts);
  return order;
}

// ---- examples ---------------------------------------------------------------------------

namespace {

DialogueExample build_example(std::span<const std::string> context,
                              std::span<const std::string> facts) {
  DialogueExample ex;
  const std::size_t first =
      context.size() > kMaxContextUtterances ? context.size() - kMaxContextUtterances : 0;
  for (std::size_t i = first; i < context.size(); ++i) {
    Tokens utt = tokenize(context[i]);
    if (!ex.joined_context.empty()) ex.joined_context.emplace_back(Vocabulary::kSepToken);
    ex.joined_context.insert(ex.joined_context.end(), utt.begin(), utt.end());
    ex.context_utterances.push_back(std::move(utt));
  }
  if (ex.joined_context.size() > kMaxContextTokens)
    ex.joined_context.erase(ex.joined_context.begin(),
                            ex.joined_context.end() - static_cast<std::ptrdiff_t>(kMaxContextTokens));
  if (ex.joined_context.empty()) throw std::invalid_argument("dialogue context is empty");
  for (const auto& raw : facts) {
    if (ex.facts.size() == kMaxFacts) break;
    Tokens f = tokenize(raw);
    if (f.empty()) continue;
    if (f.size() > kMaxFactTokens) f.resize(kMaxFactTokens);
    ex.facts.push_back(std::move(f));
  }
  return ex;
}

}  // namespace

DialogueExample make_example(std::span<const std::string> context,
                             std::span<const std::string> facts, std::string_view response) {
  DialogueExample ex = build_example(context, facts);
  ex.response = tokenize(response);
  if (ex.response.empty()) throw std::invalid_argument("response is empty");
  if (ex.response.size() > kMaxResponseTokens) ex.response.resize(kMaxResponseTokens);
  return ex;
}

DialogueExample make_prompt(std::span<const std::string> context,
                            std::span<const std::string> facts) {
  return build_example(context, facts);
}

DialogueExample prepare_record(const DialogueRecord& record, const IdfTable& idf) {
  if (record.facts.size() <= kMaxFacts) return make_example(record.context, record.facts, record.response);
  std::vector<Tokens> ctx;
  for (const auto& c : record.context) ctx.push_back(tokenize(c));
  std::vector<Tokens> pool;
  for (const auto& f : record.facts) pool.push_back(tokenize(f));
  std::vector<std::string> chosen;
  for (std::size_t i : extract_facts(ctx, pool, idf)) chosen.push_back(record.facts[i]);
  return make_example(record.context, chosen, record.response);
}

std::vector<DialogueRecord> read_dataset(std::istream& is) {
  std::vector<DialogueRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      DialogueRecord r;
      r.context = j.at("context").get<std::vector<std::string>>();
      if (j.contains("facts")) r.facts = j.at("facts").get<std::vector<std::string>>();
      if (j.contains("response")) r.response = j.at("response").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<DialogueRecord> read_dataset(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_dataset(in);
}

void write_dataset(const std::filesystem::path& path, std::span<const DialogueRecord> records) {
  auto out = open_output(path);
  for (const auto& r : records) {
    nlohmann::json j = {{"context", r.context}, {"facts", r.facts}, {"response", r.response}};
    out << j.dump() << '\n';
  }
}

std::vector<Tokens> idf_documents(std::span<const DialogueExample> examples) {
  std::vector<Tokens> docs;
  for (const auto& ex : examples) {
    for (const auto& u : ex.context_utterances) docs.push_back(u);
    for (const auto& f : ex.facts) docs.push_back(f);
    if (!ex.response.empty()) docs.push_back(ex.response);
  }
  return docs;
}

std::vector<Tokens> idf_documents(std::span<const DialogueRecord> records) {
  std::vector<Tokens> docs;
  for (const auto& r : records) {
    for (const auto& u : r.context) docs.push_back(tokenize(u));
    for (const auto& f : r.facts) docs.push_back(tokenize(f));
    if (auto t = tokenize(r.response); !t.empty()) docs.push_back(std::move(t));
  }
  return docs;
}

// ---- extended vocabulary -----------------------------------------------------------------

ExtendedVocab::ExtendedVocab(const Vocabulary& vocab, const DialogueExample& example)
    : base_(vocab.size()) {
  std::set<std::string> oov;
  auto scan = [&](const Tokens& toks) {
    for (const auto& t : toks)
      if (!vocab.contains(t)) oov.insert(t);
  };
  scan(example.joined_context);
  for (const auto& f : example.facts) scan(f);
  oov_.assign(oov.begin(), oov.end());
}

int ExtendedVocab::id(std::string_view token, const Vocabulary& vocab) const {
  if (vocab.contains(token)) return vocab.id(token);
  auto it = std::lower_bound(oov_.begin(), oov_.end(), token);
  if (it != oov_.end() && *it == token) return static_cast<int>(base_ + (it - oov_.begin()));
  return Vocabulary::kUnk;
}

std::string ExtendedVocab::token(int id, const Vocabulary& vocab) const {
  if (id >= 0 && static_cast<std::size_t>(id) < base_) return vocab.token(id);
  const auto k = static_cast<std::size_t>(id) - base_;
  if (id < 0 || k >= oov_.size()) throw std::out_of_range("extended id " + std::to_string(id));
  return oov_[k];
}

std::vector<int> ExtendedVocab::encode(std::span<const std::string> tokens,
                                       const Vocabulary& vocab) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t, vocab));
  return ids;
}

// ---- batching -----------------------------------------------------------------------------

Batch make_batch(std::span<const DialogueExample> examples, const Vocabulary& vocab) {
  Batch b;
  b.size = examples.size();
  std::size_t max_i = 0, max_k = 0, max_j = 0, max_t = 0;
  for (const auto& ex : examples) {
    max_i = std::max(max_i, ex.joined_context.size());
    max_k = std::max(max_k, ex.facts.size());
    for (const auto& f : ex.facts) max_j = std::max(max_j, f.size());
    max_t = std::max(max_t, ex.response.size());
  }
  auto padded = [](std::vector<int> ids, std::size_t n, std::vector<bool>& mask) {
    mask.assign(n, false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(ids.size()), true);
    ids.resize(n, Vocabulary::kPad);
    return ids;
  };
  for (const auto& ex : examples) {
    ExtendedVocab ext(vocab, ex);
    std::vector<bool> mask;
    b.context.push_back(padded(ext.encode(ex.joined_context, vocab), max_i, mask));
    b.context_mask.push_back(mask);
    std::vector<std::vector<int>> facts;
    std::vector<std::vector<bool>> fmask;
    for (std::size_t k = 0; k < max_k; ++k) {
      std::vector<int> ids = k < ex.facts.size() ? ext.encode(ex.facts[k], vocab) : std::vector<int>{};
      facts.push_back(padded(std::move(ids), max_j, mask));
      fmask.push_back(mask);
    }
    b.facts.push_back(std::move(facts));
    b.fact_mask.push_back(std::move(fmask));
    b.fact_count.push_back(ex.facts.size());
    b.response.push_back(padded(ext.encode(ex.response, vocab), max_t, mask));
    b.response_mask.push_back(mask);
    b.extended.push_back(std::move(ext));
  }
  return b;
}

std::vector<Batch> make_batches(std::span<const DialogueExample> examples, const Vocabulary& vocab,
                                std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, examples.size() - i);
    out.push_back(make_batch(examples.subspan(i, n), vocab));
  }
  return out;
}

}  // namespace condiv
