#include "condiv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "condiv/lexicon.hpp"
#include "json.hpp"

namespace condiv {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Ngram(t.begin() + i, t.begin() + i + n)];
  return out;
}

std::set<std::string> content_set(std::span<const Tokens> parts) {
  std::set<std::string> out;
  for (const auto& p : parts)
    for (const auto& t : p)
      if (is_content_word(t)) out.insert(t);
  return out;
}

}  // namespace

double bleu4(std::span<const Tokens> hyps, std::span<const Tokens> refs) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                                std::to_string(refs.size()) + " references");
  std::size_t hyp_len = 0, ref_len = 0;
  std::size_t match[4] = {}, total[4] = {};
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += hyps[i].size();
    ref_len += refs[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngram_counts(hyps[i], n);
      const auto r = ngram_counts(refs[i], n);
      for (const auto& [g, c] : h) {
        total[n - 1] += c;
        if (auto it = r.find(g); it != r.end()) match[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (hyp_len == 0 || match[0] == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double p = total[n] == 0 || match[n] == 0
                         ? 1e-9
                         : static_cast<double>(match[n]) / static_cast<double>(total[n]);
    log_p += 0.25 * std::log(p);
  }
  const double bp = hyp_len >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_p);
}

double distinct_n(std::span<const Tokens> hyps, std::size_t n) {
  if (n == 0) throw std::invalid_argument("distinct-n needs n >= 1");
  std::set<Ngram> distinct;
  std::size_t total = 0;
  for (const auto& h : hyps) {
    for (std::size_t i = 0; i + n <= h.size(); ++i) {
      distinct.insert(Ngram(h.begin() + i, h.begin() + i + n));
      ++total;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(total);
}

// ---- PMI ----------------------------------------------------------------------------------

PmiTable PmiTable::build(std::span<const DialogueExample> pairs) {
  PmiTable t;
  t.n_ = pairs.size();
  for (const auto& ex : pairs) {
    std::vector<Tokens> src = ex.context_utterances;
    src.insert(src.end(), ex.facts.begin(), ex.facts.end());
    const auto xs = content_set(src);
    const auto ys = content_set(std::span<const Tokens>(&ex.response, 1));
    for (const auto& x : xs) ++t.cx_[x];
    for (const auto& y : ys) ++t.cy_[y];
    for (const auto& x : xs)
      for (const auto& y : ys) ++t.cxy_[{x, y}];
  }
  return t;
}

std::size_t PmiTable::source_count(const std::string& x) const {
  auto it = cx_.find(x);
  return it == cx_.end() ? 0 : it->second;
}

std::size_t PmiTable::response_count(const std::string& y) const {
  auto it = cy_.find(y);
  return it == cy_.end() ? 0 : it->second;
}

std::size_t PmiTable::joint_count(const std::string& x, const std::string& y) const {
  auto it = cxy_.find({x, y});
  return it == cxy_.end() ? 0 : it->second;
}

double PmiTable::pmi(const std::string& x, const std::string& y) const {
  const std::size_t j = joint_count(x, y);
  if (j == 0) return 0.0;
  return std::log2(static_cast<double>(n_) * static_cast<double>(j) /
                   (static_cast<double>(source_count(x)) * static_cast<double>(response_count(y))));
}

void PmiTable::save(std::ostream& os) const {
  os << "condiv-pmi v1\n" << n_ << '\n';
  for (const auto& [x, c] : cx_) os << "x\t" << x << '\t' << c << '\n';
  for (const auto& [y, c] : cy_) os << "y\t" << y << '\t' << c << '\n';
  for (const auto& [xy, c] : cxy_) os << "xy\t" << xy.first << '\t' << xy.second << '\t' << c << '\n';
}

void PmiTable::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write PMI table: " + path.string());
  save(os);
}

PmiTable PmiTable::load(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "condiv-pmi v1") throw FormatError("line 1: expected 'condiv-pmi v1'");
  PmiTable t;
  if (!std::getline(is, line)) throw FormatError("line 2: missing pair count");
  try {
    t.n_ = std::stoul(line);
  } catch (const std::exception&) {
    throw FormatError("line 2: bad pair count '" + line + "'");
  }
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string part; std::getline(ss, part, '\t');) f.push_back(part);
    try {
      if (f.size() == 3 && f[0] == "x") t.cx_[f[1]] = std::stoul(f[2]);
      else if (f.size() == 3 && f[0] == "y") t.cy_[f[1]] = std::stoul(f[2]);
      else if (f.size() == 4 && f[0] == "xy") t.cxy_[{f[1], f[2]}] = std::stoul(f[3]);
      else throw FormatError("");
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(lineno) + ": malformed PMI record");
    }
  }
  return t;
}

PmiTable PmiTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open PMI table: " + path.string());
  return load(is);
}

double pmi_score(std::span<const std::string> response, std::span<const Tokens> context,
                 std::span<const Tokens> facts, const PmiTable& table) {
  if (response.empty()) throw std::invalid_argument("pmi: empty response");
  std::vector<Tokens> src(context.begin(), context.end());
  src.insert(src.end(), facts.begin(), facts.end());
  const auto xs = content_set(src);
  double sum = 0.0;
  for (const auto& y : response) {
    if (!is_content_word(y)) continue;
    double best = 0.0;
    for (const auto& x : xs) best = std::max(best, table.pmi(x, y));
    sum += best;
  }
  return sum / static_cast<double>(response.size());
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["schema"] = "condiv-eval v1";
  j["bleu4"] = bleu;
  j["dist1"] = dist1;
  j["dist2"] = dist2;
  j["pmi"] = has_pmi ? nlohmann::json(pmi) : nlohmann::json(nullptr);
  j["pairs"] = pairs;
  return j.dump();
}

}  // namespace condiv
