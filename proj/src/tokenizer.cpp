#include "prodemb/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace prodemb {

namespace {

const char* kSpecialNames[] = {"[PAD]", "[UNK]", "[MASK]"};

std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// UTF-8 code points; malformed bytes fall back to single-byte symbols.
std::vector<std::string> code_points(const std::string& word) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < word.size()) {
    unsigned char b = static_cast<unsigned char>(word[i]);
    size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 1;
    if (i + len > word.size()) len = 1;
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> word_symbols(const std::string& word) {
  auto syms = code_points(word);
  if (!syms.empty()) syms.back() += BpeVocab::kEndOfWord;
  return syms;
}

std::string pair_key(const std::string& a, const std::string& b) { return a + '\x01' + b; }

}  // namespace

int BpeVocab::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnkId : it->second;
}

const std::string& BpeVocab::token_of(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= id_to_token.size())
    throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocab of " +
                            std::to_string(id_to_token.size()));
  return id_to_token[static_cast<size_t>(id)];
}

void BpeVocab::finalize() {
  ranks_.clear();
  for (size_t r = 0; r < merges.size(); ++r)
    ranks_.emplace(pair_key(merges[r].first, merges[r].second), r);
}

BpeVocab train_bpe(const std::vector<std::string>& paragraphs, size_t vocab_size) {
  // Word frequencies; each unique word is tracked as a mutable symbol sequence.
  std::map<std::string, uint64_t> word_freq;
  for (const auto& p : paragraphs)
    for (auto& w : whitespace_words(p)) ++word_freq[w];
  if (word_freq.empty()) throw std::invalid_argument("train_bpe: empty corpus");

  std::vector<std::vector<std::string>> seqs;
  std::vector<uint64_t> freqs;
  std::set<std::string> base;
  for (const auto& [word, freq] : word_freq) {
    auto syms = word_symbols(word);
    for (const auto& s : syms) base.insert(s);
    seqs.push_back(std::move(syms));
    freqs.push_back(freq);
  }

  BpeVocab vocab;
  for (const char* s : kSpecialNames) {
    vocab.token_to_id.emplace(s, static_cast<int>(vocab.id_to_token.size()));
    vocab.id_to_token.emplace_back(s);
  }
  for (const auto& s : base) {
    vocab.token_to_id.emplace(s, static_cast<int>(vocab.id_to_token.size()));
    vocab.id_to_token.push_back(s);
  }
  if (vocab_size < vocab.size())
    throw std::invalid_argument("train_bpe: vocab_size " + std::to_string(vocab_size) +
                                " below base symbols + specials (" +
                                std::to_string(vocab.size()) + ")");

  while (vocab.size() < vocab_size) {
    // std::map iteration keeps the lexicographically smallest pair on ties.
    std::map<std::pair<std::string, std::string>, uint64_t> counts;
    for (size_t w = 0; w < seqs.size(); ++w) {
      const auto& s = seqs[w];
      for (size_t i = 0; i + 1 < s.size(); ++i) counts[{s[i], s[i + 1]}] += freqs[w];
    }
    const std::pair<std::string, std::string>* best = nullptr;
    uint64_t best_count = 1;  // a pair must occur at least twice
    for (const auto& [pair, count] : counts)
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    if (!best) break;

    std::string merged = best->first + best->second;
    vocab.merges.push_back(*best);
    vocab.token_to_id.emplace(merged, static_cast<int>(vocab.id_to_token.size()));
    vocab.id_to_token.push_back(merged);

    for (auto& s : seqs) {
      for (size_t i = 0; i + 1 < s.size();) {
        if (s[i] == best->first && s[i + 1] == best->second) {
          s[i] = merged;
          s.erase(s.begin() + static_cast<long>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }
  vocab.finalize();
  return vocab;
}

std::vector<int> encode(const std::string& text, const BpeVocab& vocab) {
  std::vector<int> ids;
  for (const auto& word : whitespace_words(text)) {
    auto syms = word_symbols(word);
    // Repeatedly apply the lowest-rank adjacent merge present in the word.
    while (syms.size() > 1) {
      size_t best_rank = SIZE_MAX, best_pos = 0;
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = vocab.ranks().find(pair_key(syms[i], syms[i + 1]));
        if (it != vocab.ranks().end() && it->second < best_rank) {
          best_rank = it->second;
          best_pos = i;
        }
      }
      if (best_rank == SIZE_MAX) break;
      syms[best_pos] += syms[best_pos + 1];
      syms.erase(syms.begin() + static_cast<long>(best_pos) + 1);
    }
    for (const auto& s : syms) ids.push_back(vocab.id_of(s));
  }
  return ids;
}

std::string decode(const std::vector<int>& ids, const BpeVocab& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token_of(id);
    if (vocab.is_special(id)) {
      if (!out.empty() && out.back() != ' ') out += ' ';
      out += tok;
      out += ' ';
      continue;
    }
    std::string piece = tok;
    size_t pos;
    bool end_of_word = false;
    if ((pos = piece.rfind(BpeVocab::kEndOfWord)) != std::string::npos &&
        pos + std::string(BpeVocab::kEndOfWord).size() == piece.size()) {
      piece.erase(pos);
      end_of_word = true;
    }
    out += piece;
    if (end_of_word) out += ' ';
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

void save_vocab(const BpeVocab& vocab, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  nlohmann::json jv = nlohmann::json::object();
  for (size_t i = 0; i < vocab.id_to_token.size(); ++i)
    jv[vocab.id_to_token[i]] = static_cast<int>(i);
  j["vocab"] = std::move(jv);
  nlohmann::json jm = nlohmann::json::array();
  for (const auto& [a, b] : vocab.merges) jm.push_back(nlohmann::json::array({a, b}));
  j["merges"] = std::move(jm);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

BpeVocab load_vocab(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open vocab file '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("vocab file '" + path + "' is not valid JSON: " + e.what());
  }
  BpeVocab vocab;
  const auto& jv = j.at("vocab");
  vocab.id_to_token.resize(jv.size());
  for (auto it = jv.begin(); it != jv.end(); ++it) {
    int id = it.value().get<int>();
    if (id < 0 || static_cast<size_t>(id) >= vocab.id_to_token.size())
      throw std::runtime_error("vocab file '" + path + "': ids are not dense");
    vocab.id_to_token[static_cast<size_t>(id)] = it.key();
    vocab.token_to_id.emplace(it.key(), id);
  }
  for (size_t i = 0; i < BpeVocab::kNumSpecials; ++i)
    if (vocab.id_to_token.size() <= i || vocab.id_to_token[i] != kSpecialNames[i])
      throw std::runtime_error("vocab file '" + path + "': special tokens must occupy ids 0..2");
  for (const auto& m : j.at("merges"))
    vocab.merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
  vocab.finalize();
  return vocab;
}

}  // namespace prodemb
