#include "condiv/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "condiv/metrics.hpp"
#include "condiv/service.hpp"
#include "condiv/training.hpp"
#include "json.hpp"

namespace condiv {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path& require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact(p);
  return p;
}

fs::path default_home() {
  if (const char* h = std::getenv("CONDIV_HOME"); h && *h) return h;
  return fs::current_path();
}

Runtime load_runtime(const fs::path& checkpoint, const fs::path& vocab_path, std::size_t topic_top_n) {
  Checkpoint ck = load_checkpoint(require_file(checkpoint));
  Vocabulary vocab = Vocabulary::load(require_file(vocab_path));
  IdfTable idf = IdfTable::load(require_file(vocab_path.parent_path() / "idf.txt"));
  const std::size_t n_div = ck.params.config.n_div;
  Resources res(std::move(vocab), std::move(idf), std::move(ck.topic_embeddings), n_div, topic_top_n);
  auto params = std::make_shared<const ModelParameters>(std::move(ck.params));
  return {std::make_shared<const Generator>(std::move(params), std::move(res)), sha256_file(checkpoint)};
}

namespace {

struct Options {
  std::string config, checkpoint, vocab, home, data, hyp, ref, out, text, host = "127.0.0.1",
                                                                      snapshot;
  std::vector<std::string> facts, sets;
  std::optional<double> beta;
  std::size_t k = kDefaultTopK;
  std::size_t max_length = kDefaultMaxLength;
  std::uint64_t seed = 0;
  int port = 8080;
  bool resume = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path home_of(const Options& o) { return o.home.empty() ? default_home() : fs::path(o.home); }

fs::path vocab_of(const Options& o) {
  return o.vocab.empty() ? ArtifactDir{home_of(o)}.vocab() : fs::path(o.vocab);
}

fs::path checkpoint_of(const Options& o) {
  return o.checkpoint.empty() ? ArtifactDir{home_of(o)}.checkpoint() : fs::path(o.checkpoint);
}

// Artifact directory of a training run: out_dir of the config, else home.
fs::path run_dir(const Options& o, const TrainConfig& cfg) {
  return cfg.out_dir.empty() ? home_of(o) : fs::path(cfg.out_dir);
}

TrainConfig load_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  TrainConfig cfg = TrainConfig::load(require_file(o.config));
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + kv);
    auto trim = [](std::string t) {
      t.erase(0, t.find_first_not_of(" \t"));
      t.erase(t.find_last_not_of(" \t") + 1);
      return t;
    };
    try {
      cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  return cfg;
}

std::vector<DialogueRecord> load_records(const fs::path& p) { return read_dataset(require_file(p)); }

std::vector<Tokens> read_lines(const fs::path& p) {
  std::ifstream is(require_file(p));
  std::vector<Tokens> out;
  for (std::string line; std::getline(is, line);) out.push_back(tokenize(line));
  return out;
}

json generation_json(const GenerationResult& r) {
  std::vector<std::string> prov;
  for (std::size_t i = 0; i < r.tokens.size(); ++i) prov.push_back(r.steps[i].provenance.tag());
  return {{"text", r.text},         {"tokens", r.tokens},   {"provenance", prov},
          {"beta_used", r.beta_used}, {"beta_predicted", r.beta_predicted}, {"seed", r.seed}};
}

Runtime runtime_of(const Options& o) {
  std::size_t top_n = kDefaultTopicCount;
  if (!o.config.empty()) top_n = load_config(o).topic_top_n;
  return load_runtime(checkpoint_of(o), vocab_of(o), top_n);
}

int cmd_prepare(const Options& o, std::ostream& out) {
  const TrainConfig cfg = load_config(o);
  const fs::path data = o.data.empty() ? fs::path(cfg.train_data) : fs::path(o.data);
  if (data.empty()) throw UsageError("no training data: set train_data in the config or pass --data");
  const auto records = load_records(data);
  const IdfTable idf = IdfTable::build(idf_documents(std::span<const DialogueRecord>(records)));
  std::vector<DialogueExample> examples;
  for (const auto& r : records) examples.push_back(prepare_record(r, idf));
  const Vocabulary vocab = Vocabulary::build(examples, cfg.vocab_cap);
  const PmiTable pmi = PmiTable::build(examples);

  const ArtifactDir dir{run_dir(o, cfg)};
  fs::create_directories(dir.dir);
  vocab.save(dir.vocab());
  idf.save(dir.idf());
  pmi.save(dir.pmi());
  out << json{{"pairs", examples.size()},
              {"vocab_size", vocab.size()},
              {"vocab", dir.vocab().string()},
              {"idf", dir.idf().string()},
              {"pmi", dir.pmi().string()}}
             .dump()
      << '\n';
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const TrainConfig cfg = load_config(o);
  cfg.validate();
  const ArtifactDir dir{run_dir(o, cfg)};
  const Vocabulary vocab = Vocabulary::load(require_file(o.vocab.empty() ? dir.vocab() : fs::path(o.vocab)));
  const IdfTable idf = IdfTable::load(require_file(dir.idf()));
  if (cfg.train_data.empty() || cfg.dev_data.empty())
    throw UsageError("config needs train_data and dev_data");
  auto to_examples = [&](const std::vector<DialogueRecord>& rs) {
    std::vector<DialogueExample> ex;
    for (const auto& r : rs) ex.push_back(prepare_record(r, idf));
    return ex;
  };
  const auto train_ex = to_examples(load_records(cfg.train_data));
  const auto dev_ex = to_examples(load_records(cfg.dev_data));
  const EmbeddingTable emb = cfg.embeddings.empty()
                                 ? random_embeddings(vocab, cfg.embed_dim, cfg.seed)
                                 : load_embeddings(require_file(cfg.embeddings), vocab, cfg.embed_dim, cfg.seed);
  Resources res(vocab, idf, emb.matrix, cfg.n_div, cfg.topic_top_n);
  const auto train_set = prepare_examples(train_ex, res, cfg.polarity);
  const auto dev_set = prepare_examples(dev_ex, res, cfg.polarity);

  ModelParameters params = initial_parameters(cfg, vocab, emb.matrix);
  TrainState state;
  std::optional<ModelParameters> best;
  if (o.resume && fs::exists(dir.state())) {
    state = TrainState::load(dir.state());
    params = load_checkpoint(require_file(TrainState::params_path(dir.state()))).params;
    if (fs::exists(dir.checkpoint())) best = load_checkpoint(dir.checkpoint()).params;
  }

  fs::create_directories(dir.dir);
  std::ofstream log(dir.log(), o.resume ? std::ios::app : std::ios::trunc);
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint = dir.checkpoint();
  hooks.state = dir.state();
  hooks.topic_embeddings = &emb.matrix;
  hooks.resume_best = best ? &*best : nullptr;
  const TrainResult r = train(cfg, std::move(params), std::move(state), train_set, dev_set, hooks);
  out << json{{"best_dev", r.best_dev},
              {"epochs", r.state.epoch},
              {"steps", r.state.step},
              {"embedding_coverage", emb.coverage()},
              {"checkpoint", dir.checkpoint().string()}}
             .dump()
      << '\n';
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  EvalReport rep;
  std::vector<Tokens> hyps, refs;
  std::vector<DialogueExample> sources;
  if (!o.hyp.empty() || !o.ref.empty()) {
    if (o.hyp.empty() || o.ref.empty()) throw UsageError("--hyp and --ref go together");
    hyps = read_lines(o.hyp);
    refs = read_lines(o.ref);
    if (!o.data.empty()) {
      const auto records = load_records(o.data);
      for (const auto& r : records) sources.push_back(make_example(r.context, r.facts, r.response));
    }
  } else {
    if (o.data.empty()) throw UsageError("eval needs --hyp/--ref or --data with a checkpoint");
    const Runtime rt = runtime_of(o);
    const auto records = load_records(o.data);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const DialogueExample ex = prepare_record(records[i], rt.generator->resources().idf());
      hyps.push_back(rt.generator->generate(ex, o.beta, o.k, o.max_length, o.seed + i).tokens);
      refs.push_back(ex.response);
      sources.push_back(ex);
    }
  }
  rep.pairs = hyps.size();
  rep.bleu = bleu4(hyps, refs);
  rep.dist1 = distinct_n(hyps, 1);
  rep.dist2 = distinct_n(hyps, 2);
  const fs::path pmi_path = vocab_of(o).parent_path() / "pmi.txt";
  if (!sources.empty() && sources.size() == hyps.size() && fs::exists(pmi_path)) {
    const PmiTable table = PmiTable::load(pmi_path);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      if (hyps[i].empty()) continue;
      sum += pmi_score(hyps[i], sources[i].context_utterances, sources[i].facts, table);
      ++n;
    }
    rep.has_pmi = n > 0;
    rep.pmi = n ? sum / static_cast<double>(n) : 0.0;
  }
  out << rep.to_json() << '\n';
  return 0;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const Runtime rt = runtime_of(o);
  if (o.data.empty()) {
    if (o.text.empty()) throw UsageError("generate needs --data or --text");
    GenerationRequest req;
    req.context = {o.text};
    req.facts = o.facts;
    req.beta = o.beta;
    req.k = o.k;
    req.max_length = o.max_length;
    req.seed = o.seed;
    out << generation_json(rt.generator->generate(req)).dump() << '\n';
    return 0;
  }
  const auto records = load_records(o.data);
  for (std::size_t i = 0; i < records.size(); ++i) {
    GenerationRequest req;
    req.context = records[i].context;
    req.facts = records[i].facts;
    req.beta = o.beta;
    req.k = o.k;
    req.max_length = o.max_length;
    req.seed = o.seed + i;
    out << generation_json(rt.generator->generate(req)).dump() << '\n';
  }
  return 0;
}

std::vector<std::string> split_facts(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, '|');) {
    const auto b = part.find_first_not_of(' ');
    const auto e = part.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(part.substr(b, e - b + 1));
  }
  return out;
}

int cmd_chat(const Options& o, std::istream& in, std::ostream& out) {
  const Runtime rt = runtime_of(o);
  ChatSession session("terminal", o.facts, o.seed);
  std::optional<double> beta = o.beta;
  out << "commands: /facts a | b, /beta x, /beta auto, /export, /quit\n";
  for (std::string line; out << "> " << std::flush, std::getline(in, line);) {
    if (line == "/quit") break;
    if (line.starts_with("/facts")) {
      session.set_fact_pool(split_facts(line.substr(6)));
      out << "facts: " << session.fact_pool().size() << '\n';
      continue;
    }
    if (line.starts_with("/beta")) {
      const std::string v = line.size() > 6 ? line.substr(6) : "";
      if (v == "auto") {
        beta.reset();
      } else {
        try {
          const double b = std::stod(v);
          if (!(b >= 0.0 && b <= 1.0)) throw std::out_of_range("beta");
          beta = b;
        } catch (const std::exception&) {
          out << "beta must be 'auto' or a number in [0, 1]\n";
          continue;
        }
      }
      continue;
    }
    if (line == "/export") {
      out << session.export_jsonl();
      continue;
    }
    if (tokenize(line).empty()) continue;
    const auto r = session.turn(*rt.generator, line, beta, o.k);
    out << r.text << "  [beta " << r.beta_used << (r.forced ? " forced" : " predicted") << "]\n";
  }
  return 0;
}

Service* g_running = nullptr;

void on_signal(int) {
  if (g_running) g_running->stop();
}

int cmd_serve(const Options& o, std::ostream& out) {
  const Runtime rt = runtime_of(o);
  Service svc(rt.generator, rt.checkpoint_hash, {o.seed, o.k});
  g_running = &svc;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  out << json{{"listening", o.host + ":" + std::to_string(o.port)}, {"checkpoint_sha256", rt.checkpoint_hash}}
             .dump()
      << std::endl;
  const bool ok = svc.listen(o.host, o.port);
  g_running = nullptr;
  if (!o.snapshot.empty()) svc.snapshot(o.snapshot);
  if (!ok) throw std::runtime_error("cannot listen on " + o.host + ":" + std::to_string(o.port));
  return 0;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  const Runtime rt = runtime_of(o);
  const Resources& res = rt.generator->resources();
  std::vector<DialogueExample> prompts;
  if (!o.data.empty()) {
    for (const auto& r : load_records(o.data)) {
      GenerationRequest req;
      req.context = r.context;
      req.facts = r.facts;
      prompts.push_back(make_request_example(req, res.idf()));
    }
  } else {
    if (o.text.empty()) throw UsageError("inspect-drift needs --data or --text");
    prompts.push_back(make_prompt(std::vector<std::string>{o.text}, o.facts));
  }
  out.precision(6);
  for (std::size_t n = 0; n < prompts.size(); ++n) {
    const PreparedExample prep = prepare_example(prompts[n], res);
    if (n > 0) out << '\n';
    const auto& t = prep.topics;
    for (std::size_t i = 0; i < t.context_topics.size(); ++i)
      out << "context_topic\t" << t.context_topics[i] << '\t' << t.context_scores[i] << '\n';
    for (std::size_t i = 0; i < t.fact_topics.size(); ++i)
      out << "fact_topic\t" << t.fact_topics[i] << '\t' << t.fact_scores[i] << '\n';
    const auto& d = prep.drift;
    for (std::size_t i = 0; i < d.contextual.size(); ++i)
      out << "drift-c\t" << d.contextual[i] << '\t' << d.contextual_seed[i] << '\t'
          << d.contextual_similarity[i] << '\n';
    for (std::size_t i = 0; i < d.factual.size(); ++i)
      out << "drift-f\t" << d.factual[i] << '\t' << d.factual_seed[i] << '\t' << d.factual_similarity[i]
          << '\n';
  }
  return 0;
}

void one_line(std::ostream& err, const std::string& kind, std::string msg) {
  for (char& c : msg)
    if (c == '\n') c = ' ';
  err << "error: " << kind << ": " << msg << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"condiv: fact-grounded dialogue generation with convergent and divergent decoding", "condiv"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "training config (key = value lines)");
    c->add_option("--home", o.home, "artifact directory (default $CONDIV_HOME or .)");
    c->add_option("--vocab", o.vocab, "vocabulary file; idf.txt and pmi.txt are read next to it");
    c->add_option("--set", o.sets, "override a config field, key=value (repeatable)");
  };
  auto add_model = [&](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    c->add_option("--beta", o.beta, "force beta in [0, 1]; default uses the switcher")->check(CLI::Range(0.0, 1.0));
    c->add_option("--k", o.k, "top-k sampling width")->check(CLI::PositiveNumber);
    c->add_option("--seed", o.seed, "sampling seed");
    c->add_option("--max-length", o.max_length, "token cap")->check(CLI::PositiveNumber);
  };

  auto* prepare = app.add_subcommand("prepare", "build vocabulary, IDF and PMI artifacts");
  add_common(prepare);
  prepare->add_option("--data", o.data, "training dataset (overrides train_data)");

  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  add_common(train_cmd);
  train_cmd->add_flag("--resume", o.resume, "continue from train.state");

  auto* eval = app.add_subcommand("eval", "BLEU-4, Dist-1/2 and PMI");
  add_common(eval);
  add_model(eval);
  eval->add_option("--hyp", o.hyp, "hypotheses, one per line");
  eval->add_option("--ref", o.ref, "references, one per line");
  eval->add_option("--data", o.data, "dataset: generate from it, or the sources aligned with --hyp");

  auto* gen = app.add_subcommand("generate", "generate responses as JSON lines");
  add_common(gen);
  add_model(gen);
  gen->add_option("--data", o.data, "dataset of prompts");
  gen->add_option("--text", o.text, "single context utterance");
  gen->add_option("--fact", o.facts, "fact for --text (repeatable)");

  auto* chat = app.add_subcommand("chat", "interactive terminal chat");
  add_common(chat);
  add_model(chat);
  chat->add_option("--fact", o.facts, "initial fact (repeatable)");

  auto* serve = app.add_subcommand("serve", "HTTP service");
  add_common(serve);
  add_model(serve);
  serve->add_option("--port", o.port, "port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", o.host, "bind address");
  serve->add_option("--snapshot", o.snapshot, "directory for session transcripts on shutdown");

  auto* inspect = app.add_subcommand("inspect-drift", "topic words and drift words per prompt");
  add_common(inspect);
  add_model(inspect);
  inspect->add_option("--data", o.data, "dataset of prompts");
  inspect->add_option("--text", o.text, "single context utterance");
  inspect->add_option("--fact", o.facts, "fact for --text (repeatable)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    one_line(err, "usage", e.what());
    err << app.help();
    return 2;
  }

  try {
    if (*prepare) return cmd_prepare(o, out);
    if (*train_cmd) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*gen) return cmd_generate(o, out);
    if (*chat) return cmd_chat(o, in, out);
    if (*serve) return cmd_serve(o, out);
    if (*inspect) return cmd_inspect(o, out);
  } catch (const UsageError& e) {
    one_line(err, "usage", e.what());
    return 2;
  } catch (const MissingArtifact& e) {
    one_line(err, "missing-artifact", e.path.string());
    return 3;
  } catch (const std::exception& e) {
    one_line(err, "failed", e.what());
    return 1;
  }
  return 2;
}

}  // namespace condiv
