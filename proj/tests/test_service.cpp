#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "condiv/cli.hpp"
#include "condiv/service.hpp"
#include "doctest.h"
#include "fixture.hpp"
#include "httplib.h"

using namespace condiv;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const Generator> small_generator() {
  static const std::shared_ptr<const Generator> gen = [] {
    auto s = fixture::small();
    s.cfg.max_epochs = 1;
    auto r = train(s.cfg, initial_parameters(s.cfg, s.vocab, s.emb.matrix), TrainState{}, s.ptrain, s.pdev);
    return std::make_shared<const Generator>(std::make_shared<const ModelParameters>(r.best), s.res);
  }();
  return gen;
}

Service make_service() { return Service(small_generator(), "feedface", {5, 10}); }

std::string chat_body(const std::string& session, const std::string& text, json extra = json::object()) {
  extra["session_id"] = session;
  extra["text"] = text;
  return extra.dump();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "condiv_test_service" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args, const std::string& input = "") {
  args.insert(args.begin(), "condiv");
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("sha256") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  auto dir = scratch("sha");
  std::ofstream(dir / "f.bin", std::ios::binary) << "abc";
  CHECK(sha256_file(dir / "f.bin") == sha256_hex("abc"));
  CHECK_THROWS(sha256_file(dir / "missing"));
}

TEST_CASE("routing errors") {
  Service svc = make_service();
  auto expect = [&](const std::string& method, const std::string& path, const std::string& body, int status,
                    const std::string& field) {
    HttpReply r = svc.handle(method, path, body);
    CHECK(r.status == status);
    json j = r.json();
    CHECK(j["schema"] == "v1");
    CHECK(j["error"]["field"] == field);
  };
  expect("GET", "/v1/nothing", "", 404, "path");
  expect("GET", "/v1/chat", "", 405, "method");
  expect("POST", "/v1/health", "", 405, "method");
  expect("POST", "/v1/session/x", "", 405, "method");
  expect("GET", "/v1/session/unknown", "", 404, "session_id");
  expect("POST", "/v1/chat", "{not json", 400, "body");
  expect("POST", "/v1/chat", "[1, 2]", 400, "body");
  expect("POST", "/v1/chat", R"({"text": "hi"})", 400, "session_id");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"role", "system"}}), 400, "role");
  expect("POST", "/v1/chat", R"({"session_id": "a"})", 400, "text");
  expect("POST", "/v1/chat", chat_body("a", "  "), 400, "text");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"beta", 1.5}}), 422, "beta");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"beta", -0.01}}), 422, "beta");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"beta", "high"}}), 400, "beta");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"k", 0}}), 400, "k");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"seed", -3}}), 400, "seed");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"facts", {"a", "b", "c", "d", "e"}}}), 400, "facts");
  expect("POST", "/v1/chat", chat_body("a", "hi", {{"facts", {"a", 3}}}), 400, "facts");
  expect("POST", "/v1/generate", R"({"context": []})", 400, "context");
  expect("POST", "/v1/generate", R"({"facts": []})", 400, "context");
  expect("POST", "/v1/generate", R"({"context": ["hi"], "max_length": 0})", 400, "max_length");
  expect("POST", "/v1/generate", R"({"context": ["hi"], "beta": 2})", 422, "beta");
  // failed requests never open a session
  CHECK(svc.session_count() == 0);
}

TEST_CASE("health reports the checkpoint hash") {
  Service svc = make_service();
  json h = svc.handle("GET", "/v1/health", "").json();
  CHECK(h["status"] == "ok");
  CHECK(h["checkpoint_sha256"] == "feedface");
  CHECK(h["uptime_seconds"].get<double>() >= 0.0);
  svc.swap(small_generator(), "cafe");
  CHECK(svc.handle("GET", "/v1/health", "").json()["checkpoint_sha256"] == "cafe");
  CHECK_THROWS_AS(svc.swap(nullptr, "x"), std::invalid_argument);
}

TEST_CASE("forced beta is used and the prediction still reported") {
  Service svc = make_service();
  HttpReply r = svc.handle("POST", "/v1/chat", chat_body("s", "any plans for tokyo", {{"beta", 1.0}, {"seed", 3}}));
  REQUIRE(r.status == 200);
  json j = r.json();
  CHECK(j["role"] == "system");
  CHECK(j["session_id"] == "s");
  CHECK(j["seed"] == 3);
  const json& d = j["diagnostics"];
  CHECK(d["beta_used"] == 1.0);
  CHECK(d["forced"] == true);
  const double pred = d["beta_predicted"].get<double>();
  CHECK(pred > 0.0);
  CHECK(pred < 1.0);
  CHECK(d["provenance"].size() == j["tokens"].size());
  for (const auto& p : d["provenance"]) {
    CHECK(p["source"] != "context");
    CHECK(p["source"].get<std::string>().rfind("fact", 0) != 0);
  }
  for (const auto& st : d["steps"]) CHECK(st["alternatives"].size() <= 5);
  CHECK(d.contains("drift"));
  CHECK(d["drift"]["contextual"].is_array());

  json auto_beta = svc.handle("POST", "/v1/chat", chat_body("s", "thinking of kyoto")).json();
  CHECK(auto_beta["diagnostics"]["forced"] == false);
  CHECK(auto_beta["diagnostics"]["beta_used"] == auto_beta["diagnostics"]["beta_predicted"]);
  // session seed base 5 plus the turn counter
  CHECK(auto_beta["seed"] == 6);
}

TEST_CASE("chat facts and session transcript") {
  Service svc = make_service();
  const json facts = {"tokyo is famous for sushi", "locals also enjoy ramen"};
  REQUIRE(svc.handle("POST", "/v1/chat", chat_body("t", "any plans for tokyo", {{"facts", facts}})).status == 200);
  REQUIRE(svc.handle("POST", "/v1/chat", chat_body("t", "and after that", {{"beta", 0.0}})).status == 200);
  json s = svc.handle("GET", "/v1/session/t", "").json();
  CHECK(s["facts"] == facts);
  REQUIRE(s["transcript"].size() == 4);
  CHECK(s["transcript"][0]["speaker"] == "user");
  CHECK(s["transcript"][0]["beta"].is_null());
  CHECK(s["transcript"][3]["beta"] == 0.0);
  CHECK(svc.find_session("t") != nullptr);
  CHECK(svc.find_session("nope") == nullptr);

  auto dir = scratch("snap");
  svc.snapshot(dir);
  std::ifstream in(dir / "t.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 4);
}

TEST_CASE("generate accepts fact pools") {
  Service svc = make_service();
  json body = {{"context", {"any plans for tokyo"}},
               {"facts", {"a", "b", "c", "tokyo is famous for sushi", "e", "f"}},
               {"seed", 9},
               {"max_length", 5}};
  HttpReply r = svc.handle("POST", "/v1/generate", body.dump());
  REQUIRE(r.status == 200);
  json j = r.json();
  CHECK(j["seed"] == 9);
  CHECK(j["tokens"].size() <= 5);
  CHECK(svc.handle("POST", "/v1/generate", body.dump()).body == r.body);
  CHECK(svc.session_count() == 0);
}

TEST_CASE("concurrent sessions stay separate") {
  Service svc = make_service();
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&, i] {
      for (int turn = 0; turn < 3; ++turn) {
        auto r = svc.handle("POST", "/v1/chat", chat_body("user" + std::to_string(i % 4), "thinking of rome"));
        if (r.status == 200) ++ok;
      }
    });
  for (auto& t : threads) t.join();
  CHECK(ok == 24);
  CHECK(svc.session_count() == 4);
  for (int i = 0; i < 4; ++i) {
    auto tr = svc.find_session("user" + std::to_string(i))->transcript();
    REQUIRE(tr.size() == 12);
    for (std::size_t k = 0; k < tr.size(); ++k) CHECK(tr[k].speaker == (k % 2 ? "system" : "user"));
  }
}

TEST_CASE("http server round trip") {
  Service svc = make_service();
  const int port = 18000 + static_cast<int>(::getpid() % 2000);
  std::thread server([&] { svc.listen("127.0.0.1", port); });
  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(1);
  httplib::Result health;
  for (int attempt = 0; attempt < 100 && !health; ++attempt) {
    health = client.Get("/v1/health");
    if (!health) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["checkpoint_sha256"] == "feedface");
  auto chat = client.Post("/v1/chat", chat_body("h", "have you heard of paris"), "application/json");
  REQUIRE(chat);
  CHECK(chat->status == 200);
  CHECK(chat->get_header_value("Content-Type") == "application/json");
  auto bad = client.Post("/v1/chat", chat_body("h", "hi", {{"beta", 3}}), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  auto missing = client.Get("/v1/elsewhere");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  svc.stop();
  server.join();
}

TEST_CASE("cli exit codes") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  auto dir = scratch("cli");
  auto missing = cli({"generate", "--checkpoint", (dir / "none.ckpt").string(), "--vocab",
                      (dir / "vocab.txt").string(), "--text", "hi"});
  CHECK(missing.code == 3);
  CHECK(missing.err.rfind("error: missing-artifact:", 0) == 0);
  CHECK(cli({"generate", "--beta", "2", "--text", "hi"}).code == 2);
  CHECK(cli({"prepare"}).code == 2);

  std::ofstream(dir / "a.txt") << "how about the sushi in tokyo ?\nhello there\n";
  std::ofstream(dir / "b.txt") << "one line\n";
  auto same = cli({"eval", "--hyp", (dir / "a.txt").string(), "--ref", (dir / "a.txt").string(), "--vocab",
                   (dir / "vocab.txt").string()});
  REQUIRE(same.code == 0);
  json rep = json::parse(same.out);
  CHECK(rep["bleu4"].get<double>() == doctest::Approx(100.0));
  CHECK(rep["pairs"] == 2);
  CHECK(rep["pmi"].is_null());
  auto mismatch = cli({"eval", "--hyp", (dir / "a.txt").string(), "--ref", (dir / "b.txt").string()});
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.rfind("error: failed:", 0) == 0);
  CHECK(cli({"eval", "--hyp", (dir / "a.txt").string()}).code == 2);
}

TEST_CASE("cli prepare, train, generate and inspect on a toy run") {
  auto dir = scratch("toy");
  const auto corpus = make_synthetic_corpus(3, 20, 10, 5, 8);
  write_dataset(dir / "train.jsonl", corpus.train);
  write_dataset(dir / "dev.jsonl", corpus.dev);
  write_dataset(dir / "heldout.jsonl", corpus.heldout);
  write_embedding_file(dir / "embeddings.txt", corpus);
  std::ofstream(dir / "toy.cfg") << "train_data = train.jsonl\ndev_data = dev.jsonl\nembeddings = embeddings.txt\n"
                                    "out_dir = .\nembed_dim = 8\nhidden = 8\nlearning_rate = 0.01\n"
                                    "batch_size = 10\nmax_epochs = 1\nprecision = f64\n";
  const std::string cfg = (dir / "toy.cfg").string();

  auto prep = cli({"prepare", "--config", cfg});
  REQUIRE(prep.code == 0);
  CHECK(fs::exists(dir / "vocab.txt"));
  CHECK(fs::exists(dir / "idf.txt"));
  CHECK(fs::exists(dir / "pmi.txt"));

  CHECK(cli({"train", "--config", cfg, "--set", "hidden"}).code == 2);
  CHECK(cli({"train", "--config", cfg, "--set", "bogus=1"}).code == 2);
  auto tr = cli({"train", "--config", cfg, "--set", "max_epochs = 2"});
  REQUIRE(tr.code == 0);
  json tj = json::parse(tr.out);
  CHECK(tj["epochs"] == 2);
  CHECK(tj["embedding_coverage"] == 1.0);
  CHECK(fs::exists(dir / "model.ckpt"));
  CHECK(fs::exists(dir / "train.log.jsonl"));

  auto resumed = cli({"train", "--config", cfg, "--set", "max_epochs=3", "--resume"});
  REQUIRE(resumed.code == 0);
  CHECK(json::parse(resumed.out)["epochs"] == 3);

  const std::string home = dir.string();
  auto gen = cli({"generate", "--home", home, "--text", "any plans for tokyo", "--fact",
                  "tokyo is famous for sushi", "--seed", "4", "--beta", "0"});
  REQUIRE(gen.code == 0);
  json g = json::parse(gen.out);
  CHECK(g["beta_used"] == 0.0);
  CHECK(g["provenance"].size() == g["tokens"].size());
  CHECK(cli({"generate", "--home", home, "--text", "any plans for tokyo", "--fact", "tokyo is famous for sushi",
             "--seed", "4", "--beta", "0"})
            .out == gen.out);

  auto batch = cli({"generate", "--home", home, "--data", (dir / "heldout.jsonl").string()});
  REQUIRE(batch.code == 0);
  CHECK(std::count(batch.out.begin(), batch.out.end(), '\n') == 5);

  auto ev = cli({"eval", "--home", home, "--data", (dir / "heldout.jsonl").string(), "--k", "1"});
  REQUIRE(ev.code == 0);
  json e = json::parse(ev.out);
  CHECK(e["pairs"] == 5);
  CHECK(e["pmi"].is_number());

  auto ins = cli({"inspect-drift", "--home", home, "--data", (dir / "heldout.jsonl").string()});
  REQUIRE(ins.code == 0);
  std::istringstream lines(ins.out);
  int blocks = 1, drift_rows = 0;
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) {
      ++blocks;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string part; std::getline(ss, part, '\t');) f.push_back(part);
    const std::string kind = f[0];
    if (kind == "context_topic" || kind == "fact_topic") {
      CHECK(f.size() == 3);
    } else {
      REQUIRE((kind == "drift-c" || kind == "drift-f"));
      CHECK(f.size() == 4);
      CHECK(f[1] != f[2]);
      CHECK(std::stod(f[3]) <= 1.0);
      ++drift_rows;
    }
  }
  CHECK(blocks == 5);
  CHECK(drift_rows > 0);

  auto chat = cli({"chat", "--home", home}, "/beta 1\nthinking of oslo\n/beta nope\n/facts a | b\n/export\n/quit\n");
  REQUIRE(chat.code == 0);
  CHECK(chat.out.find("[beta 1 forced]") != std::string::npos);
  CHECK(chat.out.find("facts: 2") != std::string::npos);
  CHECK(chat.out.find("\"speaker\":\"user\"") != std::string::npos);
}
