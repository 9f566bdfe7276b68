// Writes the synthetic toy corpus, its embeddings and a training config.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "condiv/synthetic.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"write the synthetic toy corpus", "condiv-toydata"};
  std::string out = ".";
  std::uint64_t seed = 7;
  std::size_t epochs = 300;
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "corpus seed");
  app.add_option("--epochs", epochs, "epochs written into toy.cfg");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto corpus = condiv::make_synthetic_corpus(seed);
    fs::create_directories(out);
    condiv::write_dataset(fs::path(out) / "train.jsonl", corpus.train);
    condiv::write_dataset(fs::path(out) / "dev.jsonl", corpus.dev);
    condiv::write_dataset(fs::path(out) / "heldout.jsonl", corpus.heldout);
    condiv::write_embedding_file(fs::path(out) / "embeddings.txt", corpus);
    std::ofstream cfg(fs::path(out) / "toy.cfg");
    cfg << "# toy overfit run\n"
        << "train_data = train.jsonl\n"
        << "dev_data = dev.jsonl\n"
        << "embeddings = embeddings.txt\n"
        << "out_dir = .\n"
        << "embed_dim = 32\n"
        << "hidden = 32\n"
        << "learning_rate = 0.01\n"
        << "batch_size = 10\n"
        << "max_epochs = " << epochs << '\n'
        << "precision = f64\n"
        << "seed = 1\n";
  } catch (const std::exception& e) {
    std::cerr << "error: failed: " << e.what() << '\n';
    return 1;
  }
  std::cout << "wrote toy corpus to " << out << '\n';
  return 0;
}
