#include "condiv/service.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "httplib.h"

namespace condiv {

using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return sha256_hex(buf.str());
}

json masses_json(const ComponentMasses& m) {
  return {{"vocab", m.vocab},
          {"context", m.context},
          {"fact", m.fact},
          {"drift-c", m.drift_contextual},
          {"drift-f", m.drift_factual}};
}

json diagnostics_json(const GenerationResult& r) {
  json d;
  d["beta_predicted"] = r.beta_predicted;
  d["beta_used"] = r.beta_used;
  d["forced"] = r.forced;
  d["ended"] = r.ended;
  json prov = json::array();
  for (std::size_t i = 0; i < r.tokens.size(); ++i)
    prov.push_back({{"token", r.tokens[i]}, {"source", r.steps[i].provenance.tag()}});
  d["provenance"] = prov;
  auto drift_list = [](const Tokens& words, const Tokens& seeds, const std::vector<double>& sims) {
    json out = json::array();
    for (std::size_t i = 0; i < words.size(); ++i)
      out.push_back({{"word", words[i]}, {"seed", seeds[i]}, {"similarity", sims[i]}});
    return out;
  };
  d["drift"] = {
      {"contextual", drift_list(r.drift.contextual, r.drift.contextual_seed, r.drift.contextual_similarity)},
      {"factual", drift_list(r.drift.factual, r.drift.factual_seed, r.drift.factual_similarity)}};
  d["topics"] = {{"context", r.topics.context_topics}, {"facts", r.topics.fact_topics}};
  json steps = json::array();
  for (const auto& s : r.steps) {
    json alts = json::array();
    for (const auto& a : s.alternatives)
      alts.push_back({{"token", a.token}, {"probability", a.probability}, {"masses", masses_json(a.masses)}});
    steps.push_back({{"token", s.token},
                     {"probability", s.probability},
                     {"source", s.provenance.tag()},
                     {"masses", masses_json(s.masses)},
                     {"lambda", s.lambda},
                     {"fact_attention", s.fact_attention},
                     {"renormalized", s.renormalized},
                     {"alternatives", alts}});
  }
  d["steps"] = steps;
  return d;
}

namespace {

struct ApiError {
  int status;
  std::string field;
  std::string message;
};

HttpReply reply(int status, json body) {
  body["schema"] = kApiSchema;
  return {status, body.dump()};
}

HttpReply error_reply(const ApiError& e) {
  return reply(e.status, {{"error", {{"field", e.field}, {"message", e.message}}}});
}

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ApiError{400, "body", "malformed JSON"};
  if (!j.is_object()) throw ApiError{400, "body", "expected a JSON object"};
  return j;
}

std::vector<std::string> string_list(const json& j, const std::string& field) {
  if (!j.is_array()) throw ApiError{400, field, "expected an array of strings"};
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ApiError{400, field, "expected an array of strings"};
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::optional<double> beta_field(const json& j) {
  if (!j.contains("beta") || j["beta"].is_null()) return std::nullopt;
  if (!j["beta"].is_number()) throw ApiError{400, "beta", "expected a number or null"};
  const double b = j["beta"].get<double>();
  if (!(b >= 0.0 && b <= 1.0)) throw ApiError{422, "beta", "forced beta must lie in [0, 1]"};
  return b;
}

std::optional<std::uint64_t> unsigned_field(const json& j, const std::string& field) {
  if (!j.contains(field) || j[field].is_null()) return std::nullopt;
  if (!j[field].is_number_unsigned()) throw ApiError{400, field, "expected a non-negative integer"};
  return j[field].get<std::uint64_t>();
}

std::size_t positive_field(const json& j, const std::string& field, std::size_t fallback) {
  auto v = unsigned_field(j, field);
  if (!v) return fallback;
  if (*v == 0) throw ApiError{400, field, "must be at least 1"};
  return static_cast<std::size_t>(*v);
}

json result_json(const GenerationResult& r) {
  return {{"text", r.text}, {"tokens", r.tokens}, {"seed", r.seed}, {"diagnostics", diagnostics_json(r)}};
}

}  // namespace

Service::Service(std::shared_ptr<const Generator> generator, std::string checkpoint_hash,
                 ServiceOptions options)
    : generator_(std::move(generator)),
      hash_(std::move(checkpoint_hash)),
      options_(options),
      started_(std::chrono::steady_clock::now()) {
  if (!generator_) throw std::invalid_argument("service needs a generator");
}

Service::~Service() = default;

void Service::swap(std::shared_ptr<const Generator> generator, std::string checkpoint_hash) {
  if (!generator) throw std::invalid_argument("service needs a generator");
  std::lock_guard lock(model_mu_);
  generator_ = std::move(generator);
  hash_ = std::move(checkpoint_hash);
}

std::shared_ptr<const Generator> Service::generator() const {
  std::lock_guard lock(model_mu_);
  return generator_;
}

std::string Service::checkpoint_hash() const {
  std::lock_guard lock(model_mu_);
  return hash_;
}

HttpReply Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    if (path == "/v1/chat") {
      if (method != "POST") throw ApiError{405, "method", "use POST"};
      return chat(body);
    }
    if (path == "/v1/generate") {
      if (method != "POST") throw ApiError{405, "method", "use POST"};
      return generate(body);
    }
    if (path == "/v1/health") {
      if (method != "GET") throw ApiError{405, "method", "use GET"};
      return health();
    }
    constexpr std::string_view prefix = "/v1/session/";
    if (path.starts_with(prefix) && path.size() > prefix.size()) {
      if (method != "GET") throw ApiError{405, "method", "use GET"};
      return session(path.substr(prefix.size()));
    }
    throw ApiError{404, "path", "no route for " + path};
  } catch (const ApiError& e) {
    return error_reply(e);
  } catch (const std::out_of_range& e) {
    return error_reply({422, "beta", e.what()});
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    const auto colon = msg.find(':');
    std::string field = colon == std::string::npos ? "body" : msg.substr(0, colon);
    return error_reply({400, field, msg});
  } catch (const std::exception& e) {
    return error_reply({500, "server", e.what()});
  }
}

std::shared_ptr<ChatSession> Service::open_session(const std::string& id) {
  std::lock_guard lock(sessions_mu_);
  auto& s = sessions_[id];
  if (!s) s = std::make_shared<ChatSession>(id, std::vector<std::string>{}, options_.seed);
  return s;
}

std::shared_ptr<ChatSession> Service::find_session(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t Service::session_count() const {
  std::lock_guard lock(sessions_mu_);
  return sessions_.size();
}

HttpReply Service::chat(const std::string& body) {
  const json j = parse_body(body);
  if (!j.contains("session_id") || !j["session_id"].is_string() || j["session_id"].get<std::string>().empty())
    throw ApiError{400, "session_id", "required non-empty string"};
  if (j.contains("role") && j["role"] != "user") throw ApiError{400, "role", "only 'user' messages are accepted"};
  if (!j.contains("text") || !j["text"].is_string()) throw ApiError{400, "text", "required string"};
  const std::string text = j["text"].get<std::string>();
  if (tokenize(text).empty()) throw ApiError{400, "text", "utterance is empty"};
  const auto beta = beta_field(j);
  std::optional<std::vector<std::string>> facts;
  if (j.contains("facts") && !j["facts"].is_null()) {
    facts = string_list(j["facts"], "facts");
    if (facts->size() > kMaxFacts) throw ApiError{400, "facts", "at most 4 facts"};
  }
  const std::size_t k = positive_field(j, "k", options_.k);
  const auto seed = unsigned_field(j, "seed");

  auto gen = generator();
  auto s = open_session(j["session_id"].get<std::string>());
  GenerationResult r = s->turn(*gen, text, beta, k, seed, facts);
  json out = result_json(r);
  out["session_id"] = s->id();
  out["role"] = "system";
  return reply(200, out);
}

HttpReply Service::generate(const std::string& body) {
  const json j = parse_body(body);
  if (!j.contains("context")) throw ApiError{400, "context", "required array of strings"};
  GenerationRequest req;
  req.context = string_list(j["context"], "context");
  if (req.context.empty()) throw ApiError{400, "context", "at least one utterance is required"};
  if (j.contains("facts") && !j["facts"].is_null()) req.facts = string_list(j["facts"], "facts");
  req.beta = beta_field(j);
  req.k = positive_field(j, "k", options_.k);
  req.max_length = positive_field(j, "max_length", kDefaultMaxLength);
  req.seed = unsigned_field(j, "seed").value_or(options_.seed);
  GenerationResult r = generator()->generate(req);
  return reply(200, result_json(r));
}

HttpReply Service::health() const {
  const double up = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return reply(200, {{"status", "ok"}, {"checkpoint_sha256", checkpoint_hash()}, {"uptime_seconds", up}});
}

namespace {

json transcript_json(const ChatSession& s) {
  json t = json::array();
  for (const auto& e : s.transcript()) {
    json entry = {{"speaker", e.speaker},
                  {"text", e.text},
                  {"tokens", e.tokens},
                  {"beta", e.beta ? json(*e.beta) : json(nullptr)},
                  {"provenance", e.provenance}};
    if (e.speaker == "system") entry["seed"] = e.seed;
    t.push_back(entry);
  }
  return t;
}

}  // namespace

HttpReply Service::session(const std::string& id) const {
  auto s = find_session(id);
  if (!s) throw ApiError{404, "session_id", "unknown session " + id};
  return reply(200, {{"session_id", id}, {"facts", s->fact_pool()}, {"transcript", transcript_json(*s)}});
}

void Service::snapshot(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::lock_guard lock(sessions_mu_);
  for (const auto& [id, s] : sessions_) {
    std::ofstream os(dir / (id + ".jsonl"), std::ios::trunc);
    os << s->export_jsonl();
  }
}

bool Service::listen(const std::string& host, int port) {
  {
    std::lock_guard lock(server_mu_);
    server_ = std::make_unique<httplib::Server>();
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      HttpReply r = handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server_->Get(R"(/v1/.*)", route);
    server_->Post(R"(/v1/.*)", route);
  }
  return server_->listen(host, port);
}

void Service::stop() {
  std::lock_guard lock(server_mu_);
  if (server_) server_->stop();
}

}  // namespace condiv
