#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prodemb/rng.hpp"
#include "prodemb/tensor.hpp"

namespace prodemb {

struct ModelConfig {
  size_t n_layers = 6;
  size_t n_heads = 12;
  size_t d_model = 768;
  size_t d_ff = 3072;
  size_t max_len = 512;
  size_t vocab_size = 0;
  size_t embed_factor = 0;  // 0 = unfactorized token embedding
  double dropout_p = 0.1;
  uint64_t seed = 1;

  size_t head_dim() const { return d_model / n_heads; }
  void validate() const;
  // Closed-form learnable parameter count for this configuration.
  size_t param_count() const;
};

// All learnable parameters. The output projection is weight-tied to the token
// embedding (and, when factorized, to the embedding projection).
struct TransformerWeights {
  struct Layer {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, wk, wv, wo;
    Tensor ln2_gamma, ln2_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  Tensor token_embedding;        // [V, d] or [V, E]
  Tensor embedding_projection;   // [E, d] when factorized, else null
  Tensor position_embedding;     // [max_len, d]
  std::vector<Layer> layers;
  Tensor final_ln_gamma, final_ln_beta;

  std::vector<Tensor> parameters() const;  // fixed documented order
  size_t param_count() const;
  bool all_finite(std::string* offender = nullptr) const;
};

TransformerWeights init_weights(const ModelConfig& cfg);

// Pairwise allow/deny matrix over one (possibly padded) sequence.
struct AttentionMask {
  size_t t = 0;
  std::vector<uint8_t> allow;  // row-major [t, t]; allow[q * t + k]

  bool allowed(size_t q, size_t k) const { return allow[q * t + k] != 0; }
  void validate() const;  // no fully denied row

  // Real positions attend to all real positions; PAD rows attend only to
  // themselves, PAD keys are denied to everyone else.
  static AttentionMask bidirectional(size_t t_total, size_t t_real);
  // Permuted causality: (i -> j) allowed iff rank(j) < rank(i). The rank-0
  // row gets a self-only fallback so softmax stays defined; it is never
  // scored. order must be a permutation of [0, t_real).
  static AttentionMask from_permutation(const std::vector<size_t>& order, size_t t_total);

  // 0 where allowed, -inf where denied; added to attention scores.
  Tensor bias_tensor() const;
};

struct ForwardOptions {
  bool collect_attention = false;
  double dropout_p = 0.0;  // 0 disables; evaluation paths leave it at 0
  Rng* dropout_rng = nullptr;
};

struct ForwardResult {
  Tensor hidden;  // [T, d] last hidden layer (post final layer norm)
  Tensor logits;  // [T, V]
  // attentions[layer][head] is a row-stochastic [T, T] matrix (only when
  // collect_attention was set).
  std::vector<std::vector<std::vector<double>>> attentions;
};

ForwardResult forward(const std::vector<int>& ids, const AttentionMask& mask,
                      const TransformerWeights& w, const ModelConfig& cfg, Tape& tape,
                      const ForwardOptions& opts = {});

struct AttentionExport {
  std::vector<std::string> tokens;
  std::vector<double> matrix;  // [T, T]
  size_t t = 0;
};

class BpeVocab;
AttentionExport export_attention(const std::vector<int>& ids, const TransformerWeights& w,
                                 const ModelConfig& cfg, const BpeVocab& vocab, size_t layer,
                                 size_t head);
void write_attention_csv(const AttentionExport& exp, const std::string& path);

// Checkpoint: binary header (magic, version, dtype, preset tag, ModelConfig)
// followed by flat little-endian parameter arrays in parameters() order, plus
// a sidecar text manifest "<path>.manifest" listing name/shape/offset.
struct Checkpoint {
  ModelConfig config;
  TransformerWeights weights;
  std::string preset;  // bert-like | roberta-like | albert-like | xlnet-like
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, bool store_f32 = false);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace prodemb
