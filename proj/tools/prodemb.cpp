// Command-line surface for the product embedding pipeline: synthetic data,
// tokenizer training, transformer/Word2Vec pre-training, embedding
// extraction, and the two evaluation harnesses.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prodemb/corpus.hpp"
#include "prodemb/embed.hpp"
#include "prodemb/eval_npr.hpp"
#include "prodemb/eval_rank.hpp"
#include "prodemb/model.hpp"
#include "prodemb/pretrain.hpp"
#include "prodemb/tokenizer.hpp"
#include "prodemb/word2vec.hpp"

namespace {

using namespace prodemb;

// Every command writes its fully-resolved configuration next to its primary
// output so a run can be reproduced from the artifact alone.
void write_manifest(const std::string& primary_output,
                    std::map<std::string, std::string> kv) {
  std::string path = primary_output + ".manifest";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& [k, v] : kv) f << k << '=' << v << '\n';
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::vector<std::vector<int>> encode_paragraphs(const std::vector<Session>& sessions,
                                                const Catalog& catalog, const BpeVocab& vocab,
                                                size_t max_len) {
  std::vector<std::vector<int>> raw;
  for (const auto& para : build_paragraphs(sessions, catalog))
    raw.push_back(encode(para.text, vocab));
  return encode_corpus(raw, max_len);
}

std::string preset_tag(const std::string& arch, Objective obj) {
  return objective_name(obj) + "-" + arch;
}

Objective objective_from_tag(const std::string& tag) {
  if (tag.rfind("plm-", 0) == 0) return Objective::Plm;
  if (tag.rfind("mlm-", 0) == 0) return Objective::Mlm;
  throw std::runtime_error("checkpoint preset tag '" + tag + "' has no objective prefix");
}

struct SynthArgs {
  SynthConfig cfg = SynthConfig::defaults();
  PostsSynthConfig posts_cfg;
  std::string out_catalog, out_sessions, out_posts, out_histories;
};

void run_synth(const SynthArgs& a) {
  SynthData data = generate_synthetic(a.cfg);
  write_catalog(data.catalog, a.out_catalog);
  write_sessions(data.sessions, a.out_sessions);
  std::map<std::string, std::string> kv{
      {"command", "synth"},
      {"n-products", std::to_string(a.cfg.n_products)},
      {"n-sessions", std::to_string(a.cfg.n_sessions)},
      {"n-archetypes", std::to_string(a.cfg.n_archetypes)},
      {"len-min", std::to_string(a.cfg.session_len_min)},
      {"len-max", std::to_string(a.cfg.session_len_max)},
      {"coherence", fmt_double(a.cfg.session_coherence)},
      {"focus-mass", fmt_double(a.cfg.archetype_focus_mass)},
      {"seed", std::to_string(a.cfg.seed)},
      {"out-catalog", a.out_catalog},
      {"out-sessions", a.out_sessions},
  };
  if (!a.out_posts.empty() != !a.out_histories.empty())
    throw std::runtime_error("synth: --out-posts and --out-histories must be given together");
  if (!a.out_posts.empty()) {
    PostsSynthConfig pc = a.posts_cfg;
    pc.seed = a.cfg.seed;
    PostsSynthData posts = generate_synthetic_posts(a.cfg, data.catalog, pc);
    write_posts(posts.posts, a.out_posts);
    write_histories(posts.histories, a.out_histories);
    kv.emplace("out-posts", a.out_posts);
    kv.emplace("out-histories", a.out_histories);
    kv.emplace("n-posts", std::to_string(pc.n_posts));
    kv.emplace("n-users", std::to_string(pc.n_users));
  }
  write_manifest(a.out_catalog, std::move(kv));
  std::cout << "wrote " << data.catalog.size() << " products, " << data.sessions.size()
            << " sessions\n";
}

struct TokenizerArgs {
  std::string catalog, sessions, out;
  size_t vocab_size = 2000;
};

void run_tokenizer(const TokenizerArgs& a) {
  Catalog catalog = read_catalog(a.catalog);
  auto sessions = read_sessions(a.sessions);
  std::vector<std::string> texts;
  for (const auto& para : build_paragraphs(sessions, catalog)) texts.push_back(para.text);
  BpeVocab vocab = train_bpe(texts, a.vocab_size);
  save_vocab(vocab, a.out);
  write_manifest(a.out, {{"command", "tokenizer"},
                         {"catalog", a.catalog},
                         {"sessions", a.sessions},
                         {"vocab-size", std::to_string(a.vocab_size)},
                         {"out", a.out}});
  std::cout << "trained vocab of " << vocab.size() << " tokens (" << vocab.merges.size()
            << " merges)\n";
}

struct PretrainArgs {
  std::string catalog, sessions, vocab, arch = "bert-like";
  std::string objective;  // empty = derive from arch
  std::string out_checkpoint, out_report;
  ModelConfig model;
  PretrainConfig train;
  double train_fraction = 2.0 / 3.0;
  bool store_f32 = false;
  bool quiet = false;
};

void run_pretrain(PretrainArgs a) {
  static const std::vector<std::string> kArchs{"bert-like", "roberta-like", "albert-like",
                                               "xlnet-like"};
  if (std::find(kArchs.begin(), kArchs.end(), a.arch) == kArchs.end())
    throw std::runtime_error("pretrain: unknown arch preset '" + a.arch + "'");
  Objective obj = a.objective.empty()
                      ? (a.arch == "xlnet-like" ? Objective::Plm : Objective::Mlm)
                      : parse_objective(a.objective);
  if (a.arch == "albert-like" && a.model.embed_factor == 0)
    a.model.embed_factor = std::min<size_t>(128, a.model.d_model / 2);

  Catalog catalog = read_catalog(a.catalog);
  auto sessions = read_sessions(a.sessions);
  BpeVocab vocab = load_vocab(a.vocab);
  a.model.vocab_size = vocab.size();
  a.model.validate();

  auto [train_sessions, test_sessions] =
      split_sessions(sessions, a.train_fraction, a.train.seed);
  auto train_seqs = encode_paragraphs(train_sessions, catalog, vocab, a.model.max_len);
  auto test_seqs = encode_paragraphs(test_sessions, catalog, vocab, a.model.max_len);
  if (train_seqs.empty()) throw std::runtime_error("pretrain: no usable training sessions");

  a.train.objective = obj;
  PretrainResult result = pretrain(a.model, a.train, train_seqs, test_seqs, !a.quiet);

  Checkpoint ckpt;
  ckpt.config = a.model;
  ckpt.weights = std::move(result.weights);
  ckpt.preset = preset_tag(a.arch, obj);
  save_checkpoint(ckpt, a.out_checkpoint, a.store_f32);
  write_train_report(result.report, a.out_report);
  write_manifest(a.out_checkpoint,
                 {{"command", "pretrain"},
                  {"catalog", a.catalog},
                  {"sessions", a.sessions},
                  {"vocab", a.vocab},
                  {"arch", a.arch},
                  {"objective", objective_name(obj)},
                  {"layers", std::to_string(a.model.n_layers)},
                  {"heads", std::to_string(a.model.n_heads)},
                  {"d-model", std::to_string(a.model.d_model)},
                  {"d-ff", std::to_string(a.model.d_ff)},
                  {"max-len", std::to_string(a.model.max_len)},
                  {"embed-factor", std::to_string(a.model.embed_factor)},
                  {"dropout", fmt_double(a.model.dropout_p)},
                  {"epochs", std::to_string(a.train.epochs)},
                  {"batch-size", std::to_string(a.train.batch_size)},
                  {"lr", fmt_double(a.train.lr)},
                  {"weight-decay", fmt_double(a.train.weight_decay)},
                  {"mask-prob", fmt_double(a.train.mask_prob)},
                  {"predict-fraction", fmt_double(a.train.predict_fraction)},
                  {"train-fraction", fmt_double(a.train_fraction)},
                  {"seed", std::to_string(a.train.seed)},
                  {"param-dtype", a.store_f32 ? "f32" : "f64"},
                  {"out-checkpoint", a.out_checkpoint},
                  {"out-report", a.out_report}});
  const auto& last = result.report.epochs.back();
  std::cout << "pretrained " << ckpt.preset << ": train_ppl " << fmt_double(last.train_ppl)
            << " test_ppl " << fmt_double(last.test_ppl) << " (params "
            << ckpt.weights.param_count() << ")\n";
}

struct W2vArgs {
  std::string catalog, sessions, out;
  W2VConfig cfg;
};

void run_w2v(const W2vArgs& a) {
  Catalog catalog = read_catalog(a.catalog);
  auto sessions = read_sessions(a.sessions);
  std::vector<std::string> texts;
  for (const auto& para : build_paragraphs(sessions, catalog)) texts.push_back(para.text);
  W2VModel model = train_skipgram(texts, a.cfg);
  save_word_vectors(model, a.out);
  write_manifest(a.out, {{"command", "w2v"},
                         {"catalog", a.catalog},
                         {"sessions", a.sessions},
                         {"dim", std::to_string(a.cfg.dim)},
                         {"min-count", std::to_string(a.cfg.min_count)},
                         {"epochs", std::to_string(a.cfg.epochs)},
                         {"window", std::to_string(a.cfg.window)},
                         {"negatives", std::to_string(a.cfg.negatives)},
                         {"lr", fmt_double(a.cfg.lr0)},
                         {"seed", std::to_string(a.cfg.seed)},
                         {"out", a.out}});
  std::cout << "trained word2vec: vocab " << model.vocab.size() << ", final loss "
            << fmt_double(model.epoch_loss.back()) << "\n";
}

struct EmbedArgs {
  std::string checkpoint, w2v_vectors, vocab, catalog, out, tag;
  size_t threads = 1;
};

void run_embed(const EmbedArgs& a) {
  if (a.checkpoint.empty() == a.w2v_vectors.empty())
    throw std::runtime_error("embed: exactly one of --checkpoint or --w2v-vectors is required");
  Catalog catalog = read_catalog(a.catalog);
  EmbeddingStore store;
  if (!a.checkpoint.empty()) {
    if (a.vocab.empty()) throw std::runtime_error("embed: --vocab is required with --checkpoint");
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    BpeVocab vocab = load_vocab(a.vocab);
    if (vocab.size() != ckpt.config.vocab_size)
      throw std::runtime_error("embed: vocab size " + std::to_string(vocab.size()) +
                               " does not match checkpoint vocab_size " +
                               std::to_string(ckpt.config.vocab_size));
    std::string tag = a.tag.empty() ? ckpt.preset : a.tag;
    store = extract_transformer_store(ckpt.weights, ckpt.config, vocab, catalog, tag, a.threads);
  } else {
    LoadedWordVectors vectors = load_word_vectors(a.w2v_vectors);
    std::string tag = a.tag.empty() ? "word2vec" : a.tag;
    store = extract_w2v_store(vectors, catalog, tag);
  }
  store.write(a.out);
  write_manifest(a.out, {{"command", "embed"},
                         {"checkpoint", a.checkpoint},
                         {"w2v-vectors", a.w2v_vectors},
                         {"vocab", a.vocab},
                         {"catalog", a.catalog},
                         {"tag", store.tag()},
                         {"threads", std::to_string(a.threads)},
                         {"out", a.out}});
  std::cout << "wrote store '" << store.tag() << "': " << store.count() << " vectors of dim "
            << store.dim() << "\n";
}

struct EvalNprArgs {
  std::string store, catalog, sessions, out;
  NprOptions opts;
};

void run_eval_npr(const EvalNprArgs& a) {
  EmbeddingStore store = EmbeddingStore::read(a.store);
  Catalog catalog = read_catalog(a.catalog);
  auto sessions = read_sessions(a.sessions);
  MrrReport report = evaluate_npr(sessions, catalog, store, a.opts);
  write_mrr_report(report, a.out);
  write_manifest(a.out, {{"command", "eval-npr"},
                         {"store", a.store},
                         {"catalog", a.catalog},
                         {"sessions", a.sessions},
                         {"k-negatives", std::to_string(a.opts.k_negatives)},
                         {"seed", std::to_string(a.opts.seed)},
                         {"threads", std::to_string(a.opts.n_threads)},
                         {"out", a.out}});
  std::cout << "MRR " << fmt_double(report.mrr) << " over " << report.queries.size()
            << " queries (" << report.skipped << " skipped)\n";
}

struct EvalRankArgs {
  std::string store, posts, histories, out;
  RankOptions opts;
};

void run_eval_rank(const EvalRankArgs& a) {
  EmbeddingStore store = EmbeddingStore::read(a.store);
  auto posts = read_posts(a.posts);
  auto histories = read_histories(a.histories);
  NdcgReport report = evaluate_posts_ranking(posts, histories, store, a.opts);
  write_ndcg_report(report, a.out);
  write_manifest(a.out, {{"command", "eval-rank"},
                         {"store", a.store},
                         {"posts", a.posts},
                         {"histories", a.histories},
                         {"threshold", fmt_double(a.opts.distance_threshold)},
                         {"k", std::to_string(a.opts.k)},
                         {"out", a.out}});
  std::cout << "NDCG " << fmt_double(report.mean_ndcg) << " over " << report.users.size()
            << " users (" << report.skipped << " skipped)\n";
}

struct PerplexityArgs {
  std::string checkpoint, vocab, catalog, sessions, objective, out;
  double mask_prob = 0.15;
  double predict_fraction = 1.0 / 6.0;
  uint64_t seed = 1;
};

void run_perplexity(const PerplexityArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  BpeVocab vocab = load_vocab(a.vocab);
  Catalog catalog = read_catalog(a.catalog);
  auto sessions = read_sessions(a.sessions);
  auto seqs = encode_paragraphs(sessions, catalog, vocab, ckpt.config.max_len);
  Objective obj =
      a.objective.empty() ? objective_from_tag(ckpt.preset) : parse_objective(a.objective);
  double ppl = perplexity(ckpt.weights, ckpt.config, seqs, obj, a.mask_prob, a.predict_fraction,
                          a.seed);
  std::cout << "perplexity " << fmt_double(ppl) << " (" << objective_name(obj) << ", "
            << seqs.size() << " sequences)\n";
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + a.out + "' for writing");
    f << "ppl\t" << fmt_double(ppl) << '\n';
    write_manifest(a.out, {{"command", "perplexity"},
                           {"checkpoint", a.checkpoint},
                           {"vocab", a.vocab},
                           {"catalog", a.catalog},
                           {"sessions", a.sessions},
                           {"objective", objective_name(obj)},
                           {"mask-prob", fmt_double(a.mask_prob)},
                           {"predict-fraction", fmt_double(a.predict_fraction)},
                           {"seed", std::to_string(a.seed)},
                           {"out", a.out}});
  }
}

struct ExportAttentionArgs {
  std::string checkpoint, vocab, catalog, product_id, text, out;
  size_t layer = 0, head = 0;
};

void run_export_attention(const ExportAttentionArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  BpeVocab vocab = load_vocab(a.vocab);
  std::string text = a.text;
  if (text.empty()) {
    if (a.catalog.empty() || a.product_id.empty())
      throw std::runtime_error(
          "export-attention: give --text, or --catalog with --product-id");
    Catalog catalog = read_catalog(a.catalog);
    text = product_sentence(catalog.by_id(a.product_id));
  }
  std::vector<int> ids = encode(text, vocab);
  if (ids.empty()) throw std::runtime_error("export-attention: input tokenizes to nothing");
  AttentionExport exp = export_attention(ids, ckpt.weights, ckpt.config, vocab, a.layer, a.head);
  write_attention_csv(exp, a.out);
  write_manifest(a.out, {{"command", "export-attention"},
                         {"checkpoint", a.checkpoint},
                         {"vocab", a.vocab},
                         {"catalog", a.catalog},
                         {"product-id", a.product_id},
                         {"text", text},
                         {"layer", std::to_string(a.layer)},
                         {"head", std::to_string(a.head)},
                         {"out", a.out}});
  std::cout << "wrote " << exp.t << "x" << exp.t << " attention matrix (layer " << a.layer
            << ", head " << a.head << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual e-commerce product embeddings: pre-training and evaluation"};
  app.require_subcommand(1);
  app.set_config("--config")->expected(0, 1);

  SynthArgs synth;
  auto* cs = app.add_subcommand("synth", "generate a synthetic catalog and session log");
  cs->add_option("--n-products", synth.cfg.n_products);
  cs->add_option("--n-sessions", synth.cfg.n_sessions);
  cs->add_option("--n-archetypes", synth.cfg.n_archetypes);
  cs->add_option("--len-min", synth.cfg.session_len_min);
  cs->add_option("--len-max", synth.cfg.session_len_max);
  cs->add_option("--coherence", synth.cfg.session_coherence);
  cs->add_option("--focus-mass", synth.cfg.archetype_focus_mass);
  cs->add_option("--seed", synth.cfg.seed);
  cs->add_option("--out-catalog", synth.out_catalog)->required();
  cs->add_option("--out-sessions", synth.out_sessions)->required();
  cs->add_option("--out-posts", synth.out_posts);
  cs->add_option("--out-histories", synth.out_histories);
  cs->add_option("--n-posts", synth.posts_cfg.n_posts);
  cs->add_option("--n-users", synth.posts_cfg.n_users);
  cs->callback([&]() { run_synth(synth); });

  TokenizerArgs tok;
  auto* ct = app.add_subcommand("tokenizer", "train the BPE tokenizer on session paragraphs");
  ct->add_option("--catalog", tok.catalog)->required();
  ct->add_option("--sessions", tok.sessions)->required();
  ct->add_option("--vocab-size", tok.vocab_size);
  ct->add_option("--out", tok.out)->required();
  ct->callback([&]() { run_tokenizer(tok); });

  PretrainArgs pre;
  pre.model.n_layers = 2;
  pre.model.n_heads = 2;
  pre.model.d_model = 64;
  pre.model.d_ff = 256;
  pre.model.max_len = 256;
  pre.model.dropout_p = 0.1;
  auto* cp = app.add_subcommand("pretrain", "pre-train a transformer on session paragraphs");
  cp->add_option("--catalog", pre.catalog)->required();
  cp->add_option("--sessions", pre.sessions)->required();
  cp->add_option("--vocab", pre.vocab)->required();
  cp->add_option("--arch", pre.arch)
      ->description("bert-like | roberta-like | albert-like | xlnet-like");
  cp->add_option("--objective", pre.objective)->description("mlm | plm (default: from --arch)");
  cp->add_option("--layers", pre.model.n_layers);
  cp->add_option("--heads", pre.model.n_heads);
  cp->add_option("--d-model", pre.model.d_model);
  cp->add_option("--d-ff", pre.model.d_ff);
  cp->add_option("--max-len", pre.model.max_len);
  cp->add_option("--embed-factor", pre.model.embed_factor);
  cp->add_option("--dropout", pre.model.dropout_p);
  cp->add_option("--epochs", pre.train.epochs);
  cp->add_option("--batch-size", pre.train.batch_size);
  cp->add_option("--lr", pre.train.lr);
  cp->add_option("--weight-decay", pre.train.weight_decay);
  cp->add_option("--mask-prob", pre.train.mask_prob);
  cp->add_option("--predict-fraction", pre.train.predict_fraction);
  cp->add_option("--train-fraction", pre.train_fraction);
  cp->add_option("--seed", pre.train.seed);
  cp->add_flag("--param-dtype-f32", pre.store_f32, "store checkpoint parameters as f32");
  cp->add_flag("--quiet", pre.quiet);
  cp->add_option("--out-checkpoint", pre.out_checkpoint)->required();
  cp->add_option("--out-report", pre.out_report)->required();
  cp->callback([&]() {
    pre.model.seed = pre.train.seed;
    run_pretrain(pre);
  });

  W2vArgs w2v;
  w2v.cfg.dim = 64;
  w2v.cfg.min_count = 1;
  auto* cw = app.add_subcommand("w2v", "train the skip-gram baseline on session paragraphs");
  cw->add_option("--catalog", w2v.catalog)->required();
  cw->add_option("--sessions", w2v.sessions)->required();
  cw->add_option("--dim", w2v.cfg.dim);
  cw->add_option("--min-count", w2v.cfg.min_count);
  cw->add_option("--epochs", w2v.cfg.epochs);
  cw->add_option("--window", w2v.cfg.window);
  cw->add_option("--negatives", w2v.cfg.negatives);
  cw->add_option("--lr", w2v.cfg.lr0);
  cw->add_option("--seed", w2v.cfg.seed);
  cw->add_option("--out", w2v.out)->required();
  cw->callback([&]() { run_w2v(w2v); });

  EmbedArgs emb;
  auto* ce = app.add_subcommand("embed", "extract per-product embeddings into a store");
  ce->add_option("--checkpoint", emb.checkpoint);
  ce->add_option("--w2v-vectors", emb.w2v_vectors);
  ce->add_option("--vocab", emb.vocab);
  ce->add_option("--catalog", emb.catalog)->required();
  ce->add_option("--tag", emb.tag);
  ce->add_option("--threads", emb.threads);
  ce->add_option("--out", emb.out)->required();
  ce->callback([&]() { run_embed(emb); });

  EvalNprArgs npr;
  auto* cn = app.add_subcommand("eval-npr", "next product recommendation (MRR)");
  cn->add_option("--store", npr.store)->required();
  cn->add_option("--catalog", npr.catalog)->required();
  cn->add_option("--sessions", npr.sessions)->required();
  cn->add_option("--k-negatives", npr.opts.k_negatives);
  cn->add_option("--seed", npr.opts.seed);
  cn->add_option("--threads", npr.opts.n_threads);
  cn->add_option("--out", npr.out)->required();
  cn->callback([&]() { run_eval_npr(npr); });

  EvalRankArgs rank;
  auto* cr = app.add_subcommand("eval-rank", "posts ranking (NDCG)");
  cr->add_option("--store", rank.store)->required();
  cr->add_option("--posts", rank.posts)->required();
  cr->add_option("--histories", rank.histories)->required();
  cr->add_option("--threshold", rank.opts.distance_threshold);
  cr->add_option("--k", rank.opts.k);
  cr->add_option("--out", rank.out)->required();
  cr->callback([&]() { run_eval_rank(rank); });

  PerplexityArgs ppl;
  auto* cq = app.add_subcommand("perplexity", "evaluate a checkpoint's perplexity on sessions");
  cq->add_option("--checkpoint", ppl.checkpoint)->required();
  cq->add_option("--vocab", ppl.vocab)->required();
  cq->add_option("--catalog", ppl.catalog)->required();
  cq->add_option("--sessions", ppl.sessions)->required();
  cq->add_option("--objective", ppl.objective);
  cq->add_option("--mask-prob", ppl.mask_prob);
  cq->add_option("--predict-fraction", ppl.predict_fraction);
  cq->add_option("--seed", ppl.seed);
  cq->add_option("--out", ppl.out);
  cq->callback([&]() { run_perplexity(ppl); });

  ExportAttentionArgs att;
  auto* ca = app.add_subcommand("export-attention", "dump one attention head as CSV");
  ca->add_option("--checkpoint", att.checkpoint)->required();
  ca->add_option("--vocab", att.vocab)->required();
  ca->add_option("--catalog", att.catalog);
  ca->add_option("--product-id", att.product_id);
  ca->add_option("--text", att.text);
  ca->add_option("--layer", att.layer);
  ca->add_option("--head", att.head);
  ca->add_option("--out", att.out)->required();
  ca->callback([&]() { run_export_attention(att); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
