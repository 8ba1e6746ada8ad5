#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prodemb/model.hpp"
#include "prodemb/tensor.hpp"
#include "prodemb/tokenizer.hpp"

namespace prodemb {

enum class Objective { Mlm, Plm };

std::string objective_name(Objective o);
Objective parse_objective(const std::string& s);

// One masked sequence: inputs with [MASK] substitutions, original ids as
// labels at masked positions, kIgnoreTarget elsewhere.
struct MlmExample {
  std::vector<int> input_ids;
  std::vector<int> labels;
  std::vector<size_t> mask_positions;
};

// Each non-special position is masked independently with probability p and
// replaced by [MASK]; resamples until at least one position is masked.
MlmExample apply_mlm_masking(const std::vector<int>& ids, double p, uint64_t seed);

// One permuted sequence. Inputs are unmodified; positions in the predict set
// (the last ceil(c*T) ranks of the factorization order) are scored, except
// the rank-0 position, which has no context.
struct PlmExample {
  std::vector<int> input_ids;
  std::vector<size_t> factorization_order;
  std::vector<size_t> predict_set;
  std::vector<int> labels;  // labels[i] = ids[i] for scored positions, else ignore
};

PlmExample build_plm_batch(const std::vector<int>& ids, uint64_t seed, double predict_fraction);

// Recomputes the allow rule from the permutation; used by tests and the
// acceptance suite as an independent check on AttentionMask::from_permutation.
bool validate_plm_mask(const AttentionMask& mask, const std::vector<size_t>& order,
                       const std::vector<size_t>& predict_set);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);
  // Applies one update using gradients currently stored on the parameters,
  // then leaves gradients untouched (callers zero them).
  void step(double lr_override = -1.0);
  void zero_grad();
  uint64_t steps() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig cfg_;
  uint64_t step_ = 0;
};

struct PretrainConfig {
  Objective objective = Objective::Mlm;
  size_t epochs = 2;
  size_t batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 0.01;
  double mask_prob = 0.15;
  double predict_fraction = 1.0 / 6.0;
  double warmup_fraction = 0.1;  // linear warmup then linear decay
  uint64_t seed = 1;
};

struct EpochStats {
  size_t epoch = 0;
  double train_loss = 0.0;  // mean cross-entropy per scored token
  double train_ppl = 0.0;   // exp(train_loss), by construction
  double test_ppl = 0.0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

// epoch<TAB>train_loss<TAB>train_ppl<TAB>test_ppl per line.
void write_train_report(const TrainReport& report, const std::string& path);

struct Batch {
  std::vector<std::vector<int>> input_ids;  // padded to the batch max length
  std::vector<std::vector<int>> labels;
  std::vector<AttentionMask> masks;
  std::vector<size_t> real_lengths;
};

// One optimizer step over a batch; returns mean loss per scored token.
// Throws (naming the offending parameter) if an update goes non-finite.
double train_step(const Batch& batch, TransformerWeights& weights, const ModelConfig& cfg,
                  AdamW& opt, double lr, double dropout_p, Rng* dropout_rng,
                  size_t* scored_tokens = nullptr, double* loss_sum = nullptr);

// Eq.-style exponentiated mean negative log-likelihood over all scored
// tokens corpus-wide, with fixed-seed masks/orders per sequence.
double perplexity(const TransformerWeights& weights, const ModelConfig& cfg,
                  const std::vector<std::vector<int>>& sequences, Objective objective,
                  double mask_prob, double predict_fraction, uint64_t seed);

struct PretrainResult {
  TransformerWeights weights;
  TrainReport report;
};

PretrainResult pretrain(const ModelConfig& model_cfg, const PretrainConfig& cfg,
                        const std::vector<std::vector<int>>& train_seqs,
                        const std::vector<std::vector<int>>& test_seqs,
                        bool log_progress = false);

// Token sequences for every accepted session paragraph, truncated to max_len.
class Catalog;
struct Session;
std::vector<std::vector<int>> encode_corpus(const std::vector<std::vector<int>>& raw,
                                            size_t max_len);

}  // namespace prodemb
