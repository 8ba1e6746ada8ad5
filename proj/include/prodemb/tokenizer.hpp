#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace prodemb {

// Byte-pair-encoding vocabulary. Words are pre-split on whitespace and broken
// into code points; the final code point of a word carries the end-of-word
// suffix so decoding is lossless up to whitespace normalization.
struct BpeVocab {
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr int kMaskId = 2;
  static constexpr size_t kNumSpecials = 3;
  static constexpr const char* kEndOfWord = "</w>";

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::pair<std::string, std::string>> merges;

  size_t size() const { return id_to_token.size(); }
  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const;
  bool is_special(int id) const { return id >= 0 && id < static_cast<int>(kNumSpecials); }

  // Merge ranks for encoding; rebuilt by finalize() after train/load.
  void finalize();
  const std::unordered_map<std::string, size_t>& ranks() const { return ranks_; }

 private:
  std::unordered_map<std::string, size_t> ranks_;  // "left\x01right" -> merge rank
};

// Greedy highest-frequency pair merging until vocab_size is reached or no
// pair occurs twice. Ties broken lexicographically on (left, right).
BpeVocab train_bpe(const std::vector<std::string>& paragraphs, size_t vocab_size);

// Merges applied in rank order per word; unseen base symbols become UNK.
std::vector<int> encode(const std::string& text, const BpeVocab& vocab);

// Inverse of encode up to whitespace normalization; specials render as
// bracketed names.
std::string decode(const std::vector<int>& ids, const BpeVocab& vocab);

void save_vocab(const BpeVocab& vocab, const std::string& path);
BpeVocab load_vocab(const std::string& path);

}  // namespace prodemb
