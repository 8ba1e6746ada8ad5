#include "prodemb/word2vec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "prodemb/rng.hpp"

namespace prodemb {

void W2VConfig::validate() const {
  if (dim == 0 || epochs == 0 || window == 0 || negatives == 0)
    throw std::invalid_argument("w2v config: dim, epochs, window, negatives must be positive");
  if (lr0 < 0.0) throw std::invalid_argument("w2v config: lr0 must be non-negative");
  if (table_size == 0) throw std::invalid_argument("w2v config: table_size must be positive");
}

int W2VVocab::id_of(const std::string& w) const {
  auto it = index.find(w);
  return it == index.end() ? -1 : it->second;
}

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

W2VVocab build_vocab(const std::vector<std::string>& paragraphs, size_t min_count) {
  if (paragraphs.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, uint64_t> counts;
  for (const auto& p : paragraphs)
    for (const auto& w : tokenize(p)) ++counts[w];

  std::vector<std::pair<std::string, uint64_t>> kept;
  for (const auto& [w, c] : counts)
    if (c >= min_count) kept.emplace_back(w, c);
  if (kept.empty())
    throw std::invalid_argument("build_vocab: no token reaches min_count " +
                                std::to_string(min_count));
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  W2VVocab vocab;
  for (const auto& [w, c] : kept) {
    vocab.index.emplace(w, static_cast<int>(vocab.words.size()));
    vocab.words.push_back(w);
    vocab.counts.push_back(c);
  }
  return vocab;
}

std::vector<int> build_negative_table(const std::vector<uint64_t>& counts, size_t table_size) {
  std::vector<int> table(table_size);
  double total = 0.0;
  for (uint64_t c : counts) total += std::pow(static_cast<double>(c), 0.75);
  size_t i = 0;
  double cum = std::pow(static_cast<double>(counts[0]), 0.75) / total;
  for (size_t a = 0; a < table_size; ++a) {
    table[a] = static_cast<int>(i);
    if (static_cast<double>(a + 1) / static_cast<double>(table_size) > cum &&
        i + 1 < counts.size()) {
      ++i;
      cum += std::pow(static_cast<double>(counts[i]), 0.75) / total;
    }
  }
  return table;
}

W2VModel train_skipgram(const std::vector<std::string>& paragraphs, const W2VConfig& cfg) {
  cfg.validate();
  W2VModel model;
  model.vocab = build_vocab(paragraphs, cfg.min_count);
  model.dim = cfg.dim;
  size_t v = model.vocab.size();

  Rng rng(derive_seed(cfg.seed, 0x77));
  model.input.resize(v * cfg.dim);
  for (double& x : model.input)
    x = (rng.uniform01() - 0.5) / static_cast<double>(cfg.dim);
  model.output.assign(v * cfg.dim, 0.0);
  model.neg_table = build_negative_table(model.vocab.counts, cfg.table_size);

  // Corpus as id streams; tokens below min_count are dropped from the stream.
  std::vector<std::vector<int>> stream;
  uint64_t tokens_per_epoch = 0;
  for (const auto& p : paragraphs) {
    std::vector<int> ids;
    for (const auto& w : tokenize(p)) {
      int id = model.vocab.id_of(w);
      if (id >= 0) ids.push_back(id);
    }
    tokens_per_epoch += ids.size();
    stream.push_back(std::move(ids));
  }
  if (tokens_per_epoch == 0) throw std::invalid_argument("train_skipgram: corpus is all OOV");

  const uint64_t total_tokens = tokens_per_epoch * cfg.epochs;
  uint64_t processed = 0;
  std::vector<double> acc(cfg.dim);
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    uint64_t pair_count = 0;
    for (const auto& sent : stream) {
      for (size_t t = 0; t < sent.size(); ++t) {
        double lr = cfg.lr0 *
                    std::max(1e-4, 1.0 - static_cast<double>(processed) /
                                             static_cast<double>(total_tokens + 1));
        ++processed;
        int center = sent[t];
        // dynamic window, as in the classic implementation
        size_t b = 1 + static_cast<size_t>(rng.below(cfg.window));
        size_t lo = t >= b ? t - b : 0;
        size_t hi = std::min(sent.size() - 1, t + b);
        double* vin = model.input.data() + static_cast<size_t>(center) * cfg.dim;
        for (size_t c = lo; c <= hi; ++c) {
          if (c == t) continue;
          std::fill(acc.begin(), acc.end(), 0.0);
          // positive target, then negatives with label 0
          for (size_t n = 0; n <= cfg.negatives; ++n) {
            int target;
            double label;
            if (n == 0) {
              target = sent[c];
              label = 1.0;
            } else {
              target = model.neg_table[rng.below(model.neg_table.size())];
              if (target == sent[c]) continue;
              label = 0.0;
            }
            double* vout = model.output.data() + static_cast<size_t>(target) * cfg.dim;
            double dot = 0.0;
            for (size_t j = 0; j < cfg.dim; ++j) dot += vin[j] * vout[j];
            double f = 1.0 / (1.0 + std::exp(-dot));
            loss_sum += label > 0.5 ? -std::log(std::max(f, 1e-12))
                                    : -std::log(std::max(1.0 - f, 1e-12));
            double g = (label - f) * lr;
            for (size_t j = 0; j < cfg.dim; ++j) {
              acc[j] += g * vout[j];
              vout[j] += g * vin[j];
            }
          }
          for (size_t j = 0; j < cfg.dim; ++j) vin[j] += acc[j];
          ++pair_count;
        }
      }
    }
    model.epoch_loss.push_back(pair_count ? loss_sum / static_cast<double>(pair_count) : 0.0);
  }
  return model;
}

WordVector word_vector(const W2VModel& model, const std::string& token) {
  WordVector out;
  out.values.assign(model.dim, 0.0);
  int id = model.vocab.id_of(token);
  if (id < 0) {
    out.oov = true;
    return out;
  }
  const double* row = model.input_row(id);
  out.values.assign(row, row + model.dim);
  return out;
}

void save_word_vectors(const W2VModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << model.vocab.size() << ' ' << model.dim << '\n';
  char buf[32];
  for (size_t i = 0; i < model.vocab.size(); ++i) {
    f << model.vocab.words[i];
    const double* row = model.input.data() + i * model.dim;
    for (size_t j = 0; j < model.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.8g", row[j]);
      f << ' ' << buf;
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

LoadedWordVectors load_word_vectors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open word vector file '" + path + "'");
  LoadedWordVectors out;
  size_t v = 0;
  if (!(f >> v >> out.dim))
    throw std::runtime_error("word vector file '" + path + "': bad header");
  for (size_t i = 0; i < v; ++i) {
    std::string w;
    if (!(f >> w))
      throw std::runtime_error("word vector file '" + path + "': truncated at row " +
                               std::to_string(i));
    std::vector<double> vec(out.dim);
    for (size_t j = 0; j < out.dim; ++j)
      if (!(f >> vec[j]))
        throw std::runtime_error("word vector file '" + path + "': bad value in row " +
                                 std::to_string(i));
    out.index.emplace(w, static_cast<int>(out.words.size()));
    out.words.push_back(std::move(w));
    out.vectors.push_back(std::move(vec));
  }
  return out;
}

}  // namespace prodemb
