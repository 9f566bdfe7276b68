#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "condiv/inference.hpp"

namespace condiv {

/// A required input file does not exist. The CLI maps this to exit code 3.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& p)
      : std::runtime_error("missing artifact: " + p.string()), path(p) {}
  std::filesystem::path path;
};

/// Throws MissingArtifact unless `p` exists.
const std::filesystem::path& require_file(const std::filesystem::path& p);

/// File names inside an artifact directory.
struct ArtifactDir {
  std::filesystem::path dir;

  std::filesystem::path vocab() const { return dir / "vocab.txt"; }
  std::filesystem::path idf() const { return dir / "idf.txt"; }
  std::filesystem::path pmi() const { return dir / "pmi.txt"; }
  std::filesystem::path checkpoint() const { return dir / "model.ckpt"; }
  std::filesystem::path state() const { return dir / "train.state"; }
  std::filesystem::path log() const { return dir / "train.log.jsonl"; }
};

/// $CONDIV_HOME, else the working directory.
std::filesystem::path default_home();

/// A loaded checkpoint ready for generation.
struct Runtime {
  std::shared_ptr<const Generator> generator;
  std::string checkpoint_hash;
};

/// Loads the checkpoint and the vocabulary; the IDF table is read from
/// idf.txt next to the vocabulary.
Runtime load_runtime(const std::filesystem::path& checkpoint, const std::filesystem::path& vocab,
                     std::size_t topic_top_n = kDefaultTopicCount);

/// Entry point behind the `condiv` binary. args[0] is the program name.
/// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 missing file.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace condiv
