#pragma once

// HTTP front end: JSON over /v1/*. Routing lives in Service::handle so the
// whole API can be exercised without a socket.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "condiv/inference.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace condiv {

inline constexpr std::string_view kApiSchema = "v1";

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

nlohmann::json masses_json(const ComponentMasses& m);
/// beta predicted/used, per-token provenance, drift words with seeds and the
/// top-5 alternatives of every step.
nlohmann::json diagnostics_json(const GenerationResult& r);

struct HttpReply {
  int status = 200;
  std::string body;  // JSON

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

struct ServiceOptions {
  std::uint64_t seed = 0;  // seed base for new sessions
  std::size_t k = kDefaultTopK;
};

class Service {
 public:
  Service(std::shared_ptr<const Generator> generator, std::string checkpoint_hash,
          ServiceOptions options = {});
  ~Service();

  HttpReply handle(const std::string& method, const std::string& path, const std::string& body);

  /// Replaces the model between requests; in-flight requests keep theirs.
  void swap(std::shared_ptr<const Generator> generator, std::string checkpoint_hash);
  std::shared_ptr<const Generator> generator() const;
  std::string checkpoint_hash() const;

  std::shared_ptr<ChatSession> find_session(const std::string& id) const;
  std::size_t session_count() const;
  /// Writes <id>.jsonl per session.
  void snapshot(const std::filesystem::path& dir) const;

  /// Blocks serving HTTP until stop() is called from another thread.
  bool listen(const std::string& host, int port);
  void stop();

 private:
  HttpReply chat(const std::string& body);
  HttpReply generate(const std::string& body);
  HttpReply health() const;
  HttpReply session(const std::string& id) const;
  std::shared_ptr<ChatSession> open_session(const std::string& id);

  mutable std::mutex model_mu_;
  std::shared_ptr<const Generator> generator_;
  std::string hash_;
  ServiceOptions options_;
  std::chrono::steady_clock::time_point started_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<ChatSession>> sessions_;

  std::mutex server_mu_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace condiv
