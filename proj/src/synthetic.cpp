#include "condiv/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

namespace condiv {

namespace {

const std::vector<std::pair<std::string, std::string>> kTwinCities = {
    {"tokyo", "kyoto"},  {"paris", "lyon"},   {"rome", "milan"},  {"berlin", "munich"},
    {"madrid", "seville"}, {"lima", "cusco"}, {"cairo", "luxor"}, {"delhi", "agra"},
    {"oslo", "bergen"},  {"dublin", "cork"}};

// consecutive entries pair up like the cities
const std::vector<std::string> kFoods = {
    "sushi",  "ramen",   "croissants", "cheese",  "pizza",   "pasta",  "pretzels",
    "sausages", "tapas", "paella",     "ceviche", "quinoa",  "falafel", "koshari",
    "curry",  "samosas", "salmon",     "herring", "stew",    "oysters"};

const std::vector<std::string> kColors = {"red", "blue", "green", "gold", "white"};
const std::vector<std::string> kSports = {"hockey", "rugby", "tennis", "cricket", "soccer"};

const std::vector<std::string> kTemplates = {"i am going to {} soon", "have you heard of {}",
                                             "any plans for {}", "thinking of {}"};

std::string fill(const std::string& tpl, const std::string& word) {
  std::string out = tpl;
  out.replace(out.find("{}"), 2, word);
  return out;
}

struct Drawn {
  DialogueRecord record;
  int kind = 0;
};

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  // One dialogue for city index c (0..19) of the given kind, unseen so far.
  Drawn draw(std::size_t c, int kind, std::optional<std::size_t> food = std::nullopt) {
    const auto& pair = kTwinCities[c / 2];
    const std::string& city = c % 2 ? pair.second : pair.first;
    const std::string& twin = c % 2 ? pair.first : pair.second;
    for (;;) {
      Drawn d;
      d.kind = kind;
      const std::string& tpl = kTemplates[pick(kTemplates.size())];
      d.record.context = {fill(tpl, city)};
      std::string key = city + "|" + tpl;
      if (kind == 0) {
        const std::size_t f1 = food ? *food : pick(kFoods.size());
        const std::size_t f2 = f1 ^ 1;
        d.record.facts = {city + " is famous for " + kFoods[f1], "locals also enjoy " + kFoods[f2]};
        d.record.response = "how about the " + kFoods[f1] + " in " + city + " ?";
        key += "|" + kFoods[f1] + "|" + kFoods[f2];
      } else {
        const std::string& color = kColors[pick(kColors.size())];
        const std::string& sport = kSports[pick(kSports.size())];
        d.record.facts = {"the " + color + " team won the " + sport + " final",
                          sport + " tickets sold out fast"};
        d.record.response = "how about " + twin + " ?";
        key += "|" + color + "|" + sport;
      }
      if (seen_.insert(key).second) return d;
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::set<std::string> seen_;
};

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, std::size_t train_pairs, std::size_t dev_pairs,
                                      std::size_t heldout_pairs, std::size_t dim) {
  Generator gen(seed);
  SyntheticCorpus out;
  const std::size_t cities = 2 * kTwinCities.size();
  std::size_t conv = 0;
  for (std::size_t i = 0; i < train_pairs; ++i) {
    const int kind = (i / cities) % 5 < 3 ? 0 : 1;
    std::optional<std::size_t> food;
    if (kind == 0) food = 7 * conv++ % kFoods.size();
    auto d = gen.draw(i % cities, kind, food);
    out.train.push_back(d.record);
    out.train_kind.push_back(d.kind);
  }
  for (std::size_t i = 0; i < dev_pairs; ++i) {
    auto d = gen.draw(gen.pick(cities), static_cast<int>(i % 2));
    out.dev.push_back(d.record);
    out.dev_kind.push_back(d.kind);
  }
  for (std::size_t i = 0; i < heldout_pairs; ++i) out.heldout.push_back(gen.draw(i % cities, 0).record);

  std::set<std::string> vocab;
  for (const auto* part : {&out.train, &out.dev, &out.heldout})
    for (const auto& r : *part) {
      for (const auto& s : r.context)
        for (auto& t : tokenize(s)) vocab.insert(t);
      for (const auto& s : r.facts)
        for (auto& t : tokenize(s)) vocab.insert(t);
      for (auto& t : tokenize(r.response)) vocab.insert(t);
    }

  std::normal_distribution<double> normal(0.0, 1.0);
  auto gauss = [&] {
    std::vector<double> v(dim, 0.0);
    for (double& x : v) x = normal(gen.rng());
    return unit(std::move(v));
  };
  auto blend = [&](const std::vector<double>& a, double wa, const std::vector<double>& b, double wb,
                   double noise) {
    auto n = gauss();
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) v[j] = wa * a[j] + wb * b[j] + noise * n[j];
    return v;
  };
  const auto city_dir = gauss(), food_dir = gauss(), sport_dir = gauss(), color_dir = gauss();
  std::map<std::string, std::vector<double>> planted;
  for (const auto& [a, b] : kTwinCities) {
    const auto twin_dir = gauss();
    planted[a] = blend(city_dir, 0.6, twin_dir, 0.75, 0.1);
    planted[b] = blend(city_dir, 0.6, twin_dir, 0.75, 0.1);
  }
  for (const auto& s : kSports) planted[s] = blend(sport_dir, 0.7, gauss(), 0.7, 0.0);
  for (const auto& c : kColors) planted[c] = blend(color_dir, 0.7, gauss(), 0.7, 0.0);
  for (std::size_t i = 0; i + 1 < kFoods.size(); i += 2) {
    const auto pair_dir = gauss();
    planted[kFoods[i]] = blend(food_dir, 0.6, pair_dir, 0.75, 0.1);
    planted[kFoods[i + 1]] = blend(food_dir, 0.6, pair_dir, 0.75, 0.1);
  }
  for (const auto& w : vocab) {
    if (!planted.contains(w)) planted[w] = gauss();
    out.words.push_back(w);
    out.vectors.push_back(planted[w]);
  }
  return out;
}

namespace {

std::string embedding_text(const SyntheticCorpus& corpus) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < corpus.words.size(); ++i) {
    os << corpus.words[i];
    for (double v : corpus.vectors[i]) os << ' ' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace

EmbeddingTable synthetic_embeddings(const SyntheticCorpus& corpus, const Vocabulary& vocab,
                                    std::uint64_t seed) {
  std::istringstream is(embedding_text(corpus));
  const std::size_t dim = corpus.vectors.empty() ? 0 : corpus.vectors.front().size();
  return load_embeddings(is, vocab, dim, seed);
}

void write_embedding_file(const std::filesystem::path& path, const SyntheticCorpus& corpus) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write embeddings: " + path.string());
  os << embedding_text(corpus);
}

}  // namespace condiv
