#include "prodemb/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace prodemb {

std::string objective_name(Objective o) { return o == Objective::Mlm ? "mlm" : "plm"; }

Objective parse_objective(const std::string& s) {
  if (s == "mlm") return Objective::Mlm;
  if (s == "plm") return Objective::Plm;
  throw std::invalid_argument("unknown objective '" + s + "' (expected mlm or plm)");
}

MlmExample apply_mlm_masking(const std::vector<int>& ids, double p, uint64_t seed) {
  if (ids.empty()) throw std::invalid_argument("apply_mlm_masking: empty sequence");
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("apply_mlm_masking: p must be in (0, 1)");
  bool any_maskable = false;
  for (int id : ids) any_maskable |= id >= static_cast<int>(BpeVocab::kNumSpecials);
  if (!any_maskable)
    throw std::invalid_argument("apply_mlm_masking: sequence has only special tokens");

  for (uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, 0x6d, attempt));
    MlmExample ex;
    ex.input_ids = ids;
    ex.labels.assign(ids.size(), kIgnoreTarget);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < static_cast<int>(BpeVocab::kNumSpecials)) continue;
      if (rng.uniform01() < p) {
        ex.labels[i] = ids[i];
        ex.input_ids[i] = BpeVocab::kMaskId;
        ex.mask_positions.push_back(i);
      }
    }
    if (!ex.mask_positions.empty()) return ex;
  }
}

PlmExample build_plm_batch(const std::vector<int>& ids, uint64_t seed, double predict_fraction) {
  if (ids.size() < 2) throw std::invalid_argument("build_plm_batch: sequence length must be >= 2");
  if (!(predict_fraction > 0.0 && predict_fraction <= 1.0))
    throw std::invalid_argument("build_plm_batch: predict_fraction must be in (0, 1]");
  size_t t = ids.size();
  PlmExample ex;
  ex.input_ids = ids;
  ex.factorization_order.resize(t);
  std::iota(ex.factorization_order.begin(), ex.factorization_order.end(), 0);
  Rng rng(derive_seed(seed, 0x70));
  rng.shuffle(ex.factorization_order);

  size_t n_predict = static_cast<size_t>(
      std::ceil(predict_fraction * static_cast<double>(t)));
  n_predict = std::min(n_predict, t);
  ex.labels.assign(t, kIgnoreTarget);
  for (size_t r = t - n_predict; r < t; ++r) {
    size_t pos = ex.factorization_order[r];
    ex.predict_set.push_back(pos);
    if (r > 0) ex.labels[pos] = ids[pos];  // rank 0 has no context, never scored
  }
  return ex;
}

bool validate_plm_mask(const AttentionMask& mask, const std::vector<size_t>& order,
                       const std::vector<size_t>& predict_set) {
  size_t t_real = order.size();
  std::vector<size_t> rank(t_real, SIZE_MAX);
  for (size_t r = 0; r < t_real; ++r) rank[order[r]] = r;
  for (size_t pos : predict_set) {
    if (rank[pos] == 0) continue;  // excluded from the loss; fallback row allowed
    for (size_t k = 0; k < mask.t; ++k) {
      bool should = k < t_real && rank[k] < rank[pos];
      if (mask.allowed(pos, k) != should) return false;
    }
  }
  return true;
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->numel(), 0.0);
    v_[i].assign(params_[i]->numel(), 0.0);
  }
}

void AdamW::step(double lr_override) {
  ++step_;
  double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    TensorNode& p = *params_[i];
    if (p.grad.empty()) continue;  // parameter unused this step
    for (size_t j = 0; j < p.data.size(); ++j) {
      double g = p.grad[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      p.data[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.data[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void write_train_report(const TrainReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  char buf[160];
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9f\t%.9f\t%.9f\n", e.epoch, e.train_loss, e.train_ppl,
                  e.test_ppl);
    f << buf;
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

double train_step(const Batch& batch, TransformerWeights& weights, const ModelConfig& cfg,
                  AdamW& opt, double lr, double dropout_p, Rng* dropout_rng,
                  size_t* scored_tokens, double* loss_sum) {
  if (batch.input_ids.empty()) throw std::invalid_argument("train_step: empty batch");
  Tape tape;
  ForwardOptions opts;
  opts.dropout_p = dropout_p;
  opts.dropout_rng = dropout_rng;

  std::vector<Tensor> seq_losses;
  size_t total_scored = 0;
  for (size_t s = 0; s < batch.input_ids.size(); ++s) {
    auto res = forward(batch.input_ids[s], batch.masks[s], weights, cfg, tape, opts);
    size_t scored = 0;
    Tensor l = tape.cross_entropy(res.logits, batch.labels[s], {}, /*mean=*/false, &scored);
    total_scored += scored;
    seq_losses.push_back(l);
  }
  Tensor total = seq_losses[0];
  for (size_t i = 1; i < seq_losses.size(); ++i) total = tape.add(total, seq_losses[i]);
  Tensor loss = tape.scale(total, 1.0 / static_cast<double>(total_scored));

  opt.zero_grad();
  tape.backward(loss);
  opt.step(lr);

  double loss_value = loss->scalar();
  if (!std::isfinite(loss_value))
    throw std::runtime_error("train_step: non-finite loss at optimizer step " +
                             std::to_string(opt.steps()));
  std::string offender;
  if (!weights.all_finite(&offender))
    throw std::runtime_error("train_step: parameter '" + offender +
                             "' became non-finite at optimizer step " +
                             std::to_string(opt.steps()));
  if (scored_tokens) *scored_tokens = total_scored;
  if (loss_sum) *loss_sum = total->scalar();
  return loss_value;
}

namespace {

struct PreparedSequence {
  std::vector<int> input_ids;
  std::vector<int> labels;
  std::vector<size_t> order;  // PLM only
};

PreparedSequence prepare_sequence(const std::vector<int>& ids, Objective obj, double mask_prob,
                                  double predict_fraction, uint64_t seed) {
  PreparedSequence out;
  if (obj == Objective::Mlm) {
    auto ex = apply_mlm_masking(ids, mask_prob, seed);
    out.input_ids = std::move(ex.input_ids);
    out.labels = std::move(ex.labels);
  } else {
    auto ex = build_plm_batch(ids, seed, predict_fraction);
    out.input_ids = std::move(ex.input_ids);
    out.labels = std::move(ex.labels);
    out.order = std::move(ex.factorization_order);
  }
  return out;
}

Batch assemble_batch(const std::vector<const std::vector<int>*>& seqs, Objective obj,
                     double mask_prob, double predict_fraction, uint64_t seed_base) {
  Batch batch;
  size_t t_max = 0;
  for (const auto* s : seqs) t_max = std::max(t_max, s->size());
  for (size_t i = 0; i < seqs.size(); ++i) {
    auto prep = prepare_sequence(*seqs[i], obj, mask_prob, predict_fraction,
                                 derive_seed(seed_base, 0x62, i));
    size_t t_real = prep.input_ids.size();
    prep.input_ids.resize(t_max, BpeVocab::kPadId);
    prep.labels.resize(t_max, kIgnoreTarget);
    batch.masks.push_back(obj == Objective::Mlm
                              ? AttentionMask::bidirectional(t_max, t_real)
                              : AttentionMask::from_permutation(prep.order, t_max));
    batch.input_ids.push_back(std::move(prep.input_ids));
    batch.labels.push_back(std::move(prep.labels));
    batch.real_lengths.push_back(t_real);
  }
  return batch;
}

}  // namespace

double perplexity(const TransformerWeights& weights, const ModelConfig& cfg,
                  const std::vector<std::vector<int>>& sequences, Objective objective,
                  double mask_prob, double predict_fraction, uint64_t seed) {
  if (sequences.empty()) throw std::invalid_argument("perplexity: empty dataset");
  double nll_sum = 0.0;
  size_t scored_total = 0;
  Tape tape;
  NoGradGuard ng(tape);
  for (size_t s = 0; s < sequences.size(); ++s) {
    const auto& ids = sequences[s];
    auto prep = prepare_sequence(ids, objective, mask_prob, predict_fraction,
                                 derive_seed(seed, 0x65, s));
    AttentionMask mask = objective == Objective::Mlm
                             ? AttentionMask::bidirectional(ids.size(), ids.size())
                             : AttentionMask::from_permutation(prep.order, ids.size());
    auto res = forward(prep.input_ids, mask, weights, cfg, tape, {});
    size_t scored = 0;
    Tensor l = tape.cross_entropy(res.logits, prep.labels, {}, /*mean=*/false, &scored);
    nll_sum += l->scalar();
    scored_total += scored;
  }
  if (scored_total == 0) throw std::invalid_argument("perplexity: empty score set");
  return std::exp(nll_sum / static_cast<double>(scored_total));
}

PretrainResult pretrain(const ModelConfig& model_cfg, const PretrainConfig& cfg,
                        const std::vector<std::vector<int>>& train_seqs,
                        const std::vector<std::vector<int>>& test_seqs, bool log_progress) {
  model_cfg.validate();
  if (train_seqs.empty()) throw std::invalid_argument("pretrain: empty training corpus");
  if (cfg.epochs == 0 || cfg.batch_size == 0)
    throw std::invalid_argument("pretrain: epochs and batch_size must be positive");

  PretrainResult out;
  out.weights = init_weights(model_cfg);
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(out.weights.parameters(), ocfg);

  // Sort by length so batches pad little, then shuffle batch order per epoch.
  std::vector<size_t> by_len(train_seqs.size());
  std::iota(by_len.begin(), by_len.end(), 0);
  std::stable_sort(by_len.begin(), by_len.end(), [&](size_t a, size_t b) {
    return train_seqs[a].size() < train_seqs[b].size();
  });
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < by_len.size(); i += cfg.batch_size) {
    std::vector<size_t> b(by_len.begin() + static_cast<long>(i),
                          by_len.begin() + static_cast<long>(std::min(i + cfg.batch_size,
                                                                      by_len.size())));
    batches.push_back(std::move(b));
  }

  size_t total_steps = cfg.epochs * batches.size();
  size_t warmup = std::max<size_t>(1, static_cast<size_t>(cfg.warmup_fraction *
                                                          static_cast<double>(total_steps)));
  auto lr_at = [&](size_t step) {
    if (step <= warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
    double rest = static_cast<double>(total_steps - step) /
                  static_cast<double>(std::max<size_t>(1, total_steps - warmup));
    return cfg.lr * std::max(0.0, rest);
  };

  size_t step = 0;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<size_t> batch_order(batches.size());
    std::iota(batch_order.begin(), batch_order.end(), 0);
    Rng order_rng(derive_seed(cfg.seed, 0x6f, epoch));
    order_rng.shuffle(batch_order);

    double epoch_loss_sum = 0.0;
    size_t epoch_scored = 0;
    for (size_t bi = 0; bi < batch_order.size(); ++bi) {
      size_t b = batch_order[bi];
      std::vector<const std::vector<int>*> seqs;
      for (size_t idx : batches[b]) seqs.push_back(&train_seqs[idx]);
      Batch batch = assemble_batch(seqs, cfg.objective, cfg.mask_prob, cfg.predict_fraction,
                                   derive_seed(cfg.seed, 0x42, epoch, b));
      ++step;
      Rng dropout_rng(derive_seed(cfg.seed, 0x64, epoch, b));
      size_t scored = 0;
      double loss_sum = 0.0;
      train_step(batch, out.weights, model_cfg, opt, lr_at(step), model_cfg.dropout_p,
                 model_cfg.dropout_p > 0.0 ? &dropout_rng : nullptr, &scored, &loss_sum);
      epoch_loss_sum += loss_sum;
      epoch_scored += scored;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss_sum / static_cast<double>(epoch_scored);
    stats.train_ppl = std::exp(stats.train_loss);
    stats.test_ppl =
        test_seqs.empty()
            ? 0.0
            : perplexity(out.weights, model_cfg, test_seqs, cfg.objective, cfg.mask_prob,
                         cfg.predict_fraction, derive_seed(cfg.seed, 0x74, epoch));
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log_progress)
      std::fprintf(stderr, "epoch %zu: train_loss %.4f train_ppl %.4f test_ppl %.4f (%.1fs)\n",
                   epoch, stats.train_loss, stats.train_ppl, stats.test_ppl, stats.wall_seconds);
    out.report.epochs.push_back(stats);
  }
  return out;
}

std::vector<std::vector<int>> encode_corpus(const std::vector<std::vector<int>>& raw,
                                            size_t max_len) {
  std::vector<std::vector<int>> out;
  out.reserve(raw.size());
  for (auto seq : raw) {
    if (seq.size() > max_len) seq.resize(max_len);
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace prodemb
