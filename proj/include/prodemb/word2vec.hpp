#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace prodemb {

struct W2VConfig {
  size_t dim = 768;
  size_t min_count = 20;
  size_t epochs = 5;
  size_t window = 5;
  size_t negatives = 5;
  double lr0 = 0.025;  // linear decay over total processed tokens
  uint64_t seed = 1;
  size_t table_size = 1'000'000;

  void validate() const;
};

struct W2VVocab {
  std::vector<std::string> words;   // ids by descending count, ties lexicographic
  std::vector<uint64_t> counts;
  std::unordered_map<std::string, int> index;

  size_t size() const { return words.size(); }
  int id_of(const std::string& w) const;
};

// Whitespace tokens with count >= min_count. Throws if nothing survives.
W2VVocab build_vocab(const std::vector<std::string>& paragraphs, size_t min_count);

struct W2VModel {
  W2VVocab vocab;
  size_t dim = 0;
  std::vector<double> input;   // [V, dim]
  std::vector<double> output;  // [V, dim]
  std::vector<int> neg_table;  // unigram^0.75 sampling table
  std::vector<double> epoch_loss;  // mean SGNS loss per epoch

  const double* input_row(int id) const { return input.data() + static_cast<size_t>(id) * dim; }
};

// Skip-gram with negative sampling; single-threaded and deterministic in cfg.
W2VModel train_skipgram(const std::vector<std::string>& paragraphs, const W2VConfig& cfg);

struct WordVector {
  std::vector<double> values;
  bool oov = false;
};

// Input-matrix row; out-of-vocabulary tokens yield a flagged zero vector.
WordVector word_vector(const W2VModel& model, const std::string& token);

// Text interchange format: first line "V dim", then "token v1 v2 ..." rows.
void save_word_vectors(const W2VModel& model, const std::string& path);

struct LoadedWordVectors {
  size_t dim = 0;
  std::vector<std::string> words;
  std::vector<std::vector<double>> vectors;
  std::unordered_map<std::string, int> index;
};

LoadedWordVectors load_word_vectors(const std::string& path);

std::vector<int> build_negative_table(const std::vector<uint64_t>& counts, size_t table_size);

}  // namespace prodemb
