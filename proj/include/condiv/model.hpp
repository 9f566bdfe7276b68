#pragma once

// Copy-augmented encoder-decoder with convergent and divergent decoding.
//
// Shapes: d = hidden size, E = embedding size, V = vocabulary size and
// V' = V + (per-example OOV source tokens). Encoder state matrices are stored
// one row per source position ([n x 2d]).

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "condiv/autodiff.hpp"
#include "condiv/corpus.hpp"
#include "condiv/nn.hpp"
#include "condiv/topic.hpp"

namespace condiv {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = kDefaultEmbedDim;
  std::size_t hidden = 128;
  std::size_t attention = 0;  // 0: same as hidden
  std::size_t n_div = kDefaultDriftCount;
  double gamma_sw = 1.0;
  double gamma_cp = 1.0;
  // feed the previous context vector into the decoder GRU with e(y_{t-1})
  bool feed_attention = false;

  std::size_t attn_dim() const { return attention ? attention : hidden; }
  std::size_t decoder_input_dim() const { return embed_dim + (feed_attention ? 2 * hidden : 0); }
  std::size_t mixture_input_dim() const { return hidden + 4 * hidden + 2 * embed_dim; }
};

struct ModelParameters {
  ModelConfig config;
  Parameter embedding;   // [V x E], shared by both encoders and the decoder input
  GruParams encoder_fwd;  // shared by context and fact encoders
  GruParams encoder_bwd;
  GruParams decoder;
  Parameter bridge_w, bridge_b;  // s_0 = tanh(W H^c_I + b), [d x 2d], [d]
  Parameter vocab_w, vocab_b;    // [V x d], [V]
  Parameter switch_w, switch_b;  // [1 x 4d], [1]
  AttentionParams att_context;        // keys 2d
  AttentionParams att_fact_word;      // keys 2d
  AttentionParams att_fact_sentence;  // keys 2d
  AttentionParams att_drift;          // keys E, shared by both drift sets
  Parameter mix_w;                    // [3 x (d + 2d + 2d + E + E)]

  ModelParameters() = default;
  explicit ModelParameters(const ModelConfig& cfg);

  /// Uniform init in [-0.1, 0.1]; the embedding table is left untouched.
  void init(std::uint64_t seed);
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  Parameter* find(std::string_view name);
  void zero_grad();
  std::size_t count() const;
};

/// Per-example model input. Source ids are extended ids; trailing PAD
/// entries are padding and are masked out of every attention head.
struct ModelInput {
  std::vector<int> context;
  std::vector<std::vector<int>> facts;
  std::vector<int> drift_contextual;  // vocabulary ids
  std::vector<int> drift_factual;
  std::size_t extended_size = 0;
};

ModelInput make_model_input(const DialogueExample& example, const ExtendedVocab& ext,
                            const Vocabulary& vocab, const DriftWords& drift);
/// Row b of a padded batch (padding kept, empty fact slots dropped).
ModelInput model_input_from_batch(const Batch& batch, std::size_t b, const Vocabulary& vocab,
                                  const DriftWords& drift);
/// Response ids over the extended vocabulary followed by EOS.
std::vector<int> target_ids(const DialogueExample& example, const ExtendedVocab& ext,
                            const Vocabulary& vocab);

struct SourceEncoding {
  Var states;        // [n x 2d]; padding rows are zero
  Var last;          // state at the last real position, [2d]
  std::vector<bool> mask;
  std::vector<int> ids;
  std::size_t length = 0;
};

struct EncodedInputs {
  SourceEncoding context;
  Var context_keys;  // context head key projection
  std::vector<SourceEncoding> facts;
  std::vector<Var> fact_keys;  // fact-word head key projections
  Var drift_c, drift_c_keys;   // [L x E] embeddings and projections (invalid when L == 0)
  Var drift_f, drift_f_keys;
  std::vector<int> drift_c_ids, drift_f_ids;
  std::size_t extended_size = 0;
};

struct CopyResult {
  Var weights;       // attention weights (invalid for an empty source)
  Var context;       // attended vector
  Var distribution;  // copy distribution over V'
};

struct FactCopyResult {
  Var sentence_weights;           // alpha^f over facts
  std::vector<Var> word_weights;  // alpha^{f_k}
  std::vector<Var> per_fact;      // word-level copy distribution of fact k
  Var context;                    // s^f
  Var distribution;               // P^f
};

struct MixtureResult {
  Var lambda;  // (lambda^v, lambda^c, lambda^f)
  Var convergent;
  Var divergent;
  Var final;
  bool renormalized = false;
};

struct DecoderState {
  Var hidden;
  Var attention_feed;  // previous context vector (feed_attention only)
};

struct StepVars {
  DecoderState state;
  Var beta;
  Var vocab;  // P^v padded to V'
  CopyResult context;
  FactCopyResult facts;
  CopyResult drift_c;
  CopyResult drift_f;
  MixtureResult mixture;
};

/// P^con = lv Pv + lc Pc + lf Pf, P^div = lv Pv + lc Pdc + lf Pdf and
/// P = beta P^div + (1 - beta) P^con, with (lv, lc, lf) = softmax(W [s; sc; sf; sdc; sdf]).
/// When `renormalize` is set the final distribution is divided by its sum.
MixtureResult mixture(Var p_vocab, Var p_context, Var p_fact, Var p_drift_c, Var p_drift_f,
                      Var s, Var s_context, Var s_fact, Var s_drift_c, Var s_drift_f, Var beta,
                      Var mix_w, bool renormalize);

/// Binary cross-entropy of beta against a smoothed target (clipped at 1e-7).
Var switch_loss(Var beta, double smoothed_target);
/// Mean binary cross-entropy of lambda^cp_t against labels in {0, 1}.
Var copy_loss(std::span<const Var> lambda_cp, std::span<const int> labels);

/// Maps a hard switch label to its smoothed target: 1 -> s, 0 -> 1 - s.
inline double smooth_label(int label, double smoothing) {
  return label ? smoothing : 1.0 - smoothing;
}

struct LossOptions {
  double gamma_sw = 1.0;
  double gamma_cp = 1.0;
  double label_smoothing = 0.9;
  std::optional<double> forced_beta;  // mixture uses this instead of the switcher
};

struct Targets {
  std::vector<int> ids;          // extended ids, EOS last
  std::vector<int> copy_labels;  // one per id
  int switch_label = 0;
};

struct LossVars {
  Var nll, switch_term, copy_term, total;
  Var beta;
  std::vector<StepVars> steps;
};

struct LossBundle {
  double nll = 0.0;
  double switch_loss = 0.0;
  double copy_loss = 0.0;
  double total = 0.0;
  double beta = 0.0;
};

/// Graph-building view of a parameter set.
class Model {
 public:
  Model(Graph& g, ModelParameters& p);
  Model(Graph& g, const ModelParameters& p);

  Graph& graph() const { return *g_; }
  const ModelConfig& config() const { return *cfg_; }

  SourceEncoding encode_sequence(std::span<const int> ids);
  SourceEncoding encode_context(std::span<const int> ids);
  std::vector<SourceEncoding> encode_facts(const std::vector<std::vector<int>>& facts);
  EncodedInputs encode(const ModelInput& input);

  Var switch_probability(const EncodedInputs& enc);
  DecoderState initial_state(const EncodedInputs& enc);

  CopyResult context_copy(const EncodedInputs& enc, Var s);
  FactCopyResult fact_copy(const EncodedInputs& enc, Var s);
  CopyResult drift_copy(Var keys, Var projected, std::span<const int> ids, std::size_t ext_size, Var s);

  StepVars decode_step(int y_prev, const DecoderState& prev, const EncodedInputs& enc, Var beta);

  /// Teacher-forced pass over the targets and the three weighted losses.
  LossVars sequence_loss(const EncodedInputs& enc, const Targets& targets, const LossOptions& opt);

  Var embed(int id);

 private:
  template <class P>
  void bind(P& p);

  Graph* g_;
  const ModelConfig* cfg_;
  Var embedding_;
  GruVars enc_fwd_, enc_bwd_, dec_;
  Var bridge_w_, bridge_b_, vocab_w_, vocab_b_, switch_w_, switch_b_, mix_w_;
  AttentionVars att_context_, att_fact_word_, att_fact_sentence_, att_drift_;
};

LossBundle to_bundle(const LossVars& v);

/// Plain-value snapshot of one decoding step.
struct StepDistribution {
  double beta = 0.0;
  std::array<double, 3> lambda{};
  std::vector<double> p_vocab, p_context, p_fact, p_drift_c, p_drift_f;
  std::vector<double> p_convergent, p_divergent, p_final;
  std::vector<double> alpha_context, alpha_fact, alpha_drift_c, alpha_drift_f;
  std::vector<std::vector<double>> alpha_fact_words;
  std::vector<std::vector<double>> p_fact_each;  // word-level copy distribution per fact
  bool renormalized = false;
};

StepDistribution snapshot(const StepVars& step);

// ---- checkpoints ------------------------------------------------------------------

enum class Precision { f32, f64 };
std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view s);

/// "condiv-ckpt v1" header, a key-value hyperparameter block closed by "end",
/// then (name, shape, little-endian values) per tensor. Values are 32-bit in
/// f32 mode and 64-bit in f64 mode. The frozen drift-search embeddings are
/// stored as the tensor "topic.embeddings".
struct Checkpoint {
  ModelParameters params;
  Tensor topic_embeddings;
  Precision precision = Precision::f32;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                     const Tensor& topic_embeddings, Precision precision);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter value through float.
void round_to_f32(ModelParameters& params);

}  // namespace condiv
