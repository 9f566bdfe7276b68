#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "condiv/model.hpp"
#include "condiv/pipeline.hpp"

namespace condiv {

struct TrainConfig {
  double learning_rate = 0.0005;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 10;
  double gamma_sw = 1.0;
  double gamma_cp = 1.0;
  std::size_t n_div = kDefaultDriftCount;
  std::size_t hidden = 128;
  std::size_t embed_dim = kDefaultEmbedDim;
  std::size_t attention = 0;
  std::size_t vocab_cap = kDefaultVocabSize;
  std::size_t topic_top_n = kDefaultTopicCount;
  std::uint64_t seed = 1;
  double label_smoothing = 0.9;
  SwitchPolarity polarity = SwitchPolarity::motivated;
  Precision precision = Precision::f32;
  double clip_norm = 5.0;  // <= 0 disables clipping
  bool feed_attention = false;

  // Artifact locations; relative paths resolve against the config file's
  // directory when read from a file.
  std::string train_data, dev_data, embeddings, out_dir;

  /// Sets one field from its textual form. Throws std::invalid_argument on
  /// an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  /// Flat "key = value" lines; '#' starts a comment.
  static TrainConfig parse(std::istream& is);
  static TrainConfig load(const std::filesystem::path& path);
  std::string to_text() const;
  ModelConfig model_config(std::size_t vocab_size) const;
  LossOptions loss_options() const;
  /// Rejects non-positive sizes and rates.
  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor> m, v;

  void step(std::span<Parameter* const> params, double lr);
};

/// Global L2 norm of all gradients, rescaled to max_norm when above it.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);
double grad_norm(std::span<const Parameter* const> params);

/// Forward pass on a gradient-free graph.
LossBundle evaluate_example(const ModelParameters& params, const PreparedExample& ex,
                            const LossOptions& opt);
/// Mean of each loss component over the examples.
LossBundle evaluate(const ModelParameters& params, std::span<const PreparedExample> data,
                    const LossOptions& opt);
/// Forward and backward; gradients of weight * total are added to params.
LossBundle accumulate_example(ModelParameters& params, const PreparedExample& ex,
                              const LossOptions& opt, double weight);

struct StepReport {
  LossBundle loss;  // batch mean
  double grad_norm = 0.0;
};

/// One optimizer update on the mean loss of the given examples.
StepReport train_step(ModelParameters& params, Adam& adam, std::span<const PreparedExample* const> batch,
                      const TrainConfig& cfg);

/// Fraction of examples where 1[beta > 0.5] equals the switch label.
double switcher_accuracy(const ModelParameters& params, std::span<const PreparedExample> data);

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  double last_dev = 0.0;
  double best_dev = 0.0;
  bool has_best = false;
  Adam adam;
  std::mt19937_64 rng;

  /// "condiv-state v1" text file (doubles stored as hex floats). The current
  /// parameters go to a 64-bit checkpoint next to it (path + ".params").
  void save(const std::filesystem::path& path, const ModelParameters& current,
            const Tensor& topic_embeddings) const;
  static TrainState load(const std::filesystem::path& path);
  static std::filesystem::path params_path(const std::filesystem::path& state_path);
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossBundle train;
  LossBundle dev;
  bool selected = false;
};

struct TrainResult {
  ModelParameters best;
  double best_dev = 0.0;
  std::vector<EpochRecord> epochs;
  std::vector<LossBundle> steps;
  TrainState state;
};

struct TrainHooks {
  std::ostream* log = nullptr;  // JSONL records, one per step and per epoch
  std::filesystem::path checkpoint;  // best model written here when non-empty
  std::filesystem::path state;       // resumable state written after each epoch
  const Tensor* topic_embeddings = nullptr;  // stored alongside checkpoints
  const ModelParameters* resume_best = nullptr;  // best-so-far when resuming
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Fresh parameters: uniform init from the seed with the embedding rows
/// copied from `embeddings`.
ModelParameters initial_parameters(const TrainConfig& cfg, const Vocabulary& vocab,
                                   const Tensor& embeddings);

/// Runs the epochs still missing from `state` (pass a default state to start
/// fresh), keeping the parameters with the lowest dev total loss.
TrainResult train(const TrainConfig& cfg, ModelParameters params, TrainState state,
                  std::span<const PreparedExample> train_set, std::span<const PreparedExample> dev_set,
                  const TrainHooks& hooks = {});

/// Writes to a sibling temporary file and renames it into place, so a failed
/// write leaves any previous checkpoint intact.
void save_checkpoint_atomic(const std::filesystem::path& path, const ModelParameters& params,
                            const Tensor& topic_embeddings, Precision precision);

}  // namespace condiv
