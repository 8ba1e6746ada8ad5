#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "prodemb/rng.hpp"
#include "prodemb/tokenizer.hpp"

using namespace prodemb;

namespace {

// Brute-force pair counter over the pre-split corpus, used to predict the
// first merge independently of the trainer.
std::pair<std::string, std::string> most_frequent_pair(const std::vector<std::string>& corpus) {
  std::map<std::pair<std::string, std::string>, uint64_t> counts;
  for (const auto& text : corpus) {
    std::string word;
    auto flush = [&]() {
      if (word.empty()) return;
      std::vector<std::string> syms;
      for (char c : word) syms.emplace_back(1, c);
      syms.back() += BpeVocab::kEndOfWord;
      for (size_t i = 0; i + 1 < syms.size(); ++i) ++counts[{syms[i], syms[i + 1]}];
      word.clear();
    };
    for (char c : text) {
      if (c == ' ') flush();
      else word += c;
    }
    flush();
  }
  std::pair<std::string, std::string> best;
  uint64_t best_count = 0;
  for (const auto& [p, c] : counts)
    if (c > best_count) {
      best = p;
      best_count = c;
    }
  return best;
}

size_t base_symbol_count(const std::vector<std::string>& corpus) {
  std::set<std::string> syms;
  for (const auto& text : corpus) {
    std::string word;
    auto flush = [&]() {
      if (word.empty()) return;
      for (size_t i = 0; i + 1 < word.size(); ++i) syms.insert(std::string(1, word[i]));
      syms.insert(std::string(1, word.back()) + BpeVocab::kEndOfWord);
      word.clear();
    };
    for (char c : text) {
      if (c == ' ') flush();
      else word += c;
    }
    flush();
  }
  return syms.size();
}

}  // namespace

TEST_CASE("specials occupy fixed ids") {
  BpeVocab v = train_bpe({"ab"}, 10);
  CHECK(v.id_of("[PAD]") == BpeVocab::kPadId);
  CHECK(v.id_of("[UNK]") == BpeVocab::kUnkId);
  CHECK(v.id_of("[MASK]") == BpeVocab::kMaskId);
  // dense ids
  for (size_t i = 0; i < v.size(); ++i) CHECK(v.id_of(v.token_of(static_cast<int>(i))) == static_cast<int>(i));
}

TEST_CASE("first merge is the most frequent pair") {
  // "aa" twice vs "ab" once: the a-a pair (count 2) beats the a-b pair
  // (count 1). With the end-of-word marker the second symbol reads "a</w>".
  std::vector<std::string> corpus{"aa aa ab"};
  size_t base = base_symbol_count(corpus);
  BpeVocab v = train_bpe(corpus, BpeVocab::kNumSpecials + base + 1);  // budget for one merge
  REQUIRE(v.merges.size() == 1);
  CHECK(v.merges[0] == most_frequent_pair(corpus));
  CHECK(v.merges[0] ==
        std::pair<std::string, std::string>{"a", std::string("a") + BpeVocab::kEndOfWord});
}

TEST_CASE("vocab_size at base + specials gives a character-level vocab") {
  std::vector<std::string> corpus{"abc cba bac"};
  size_t base = base_symbol_count(corpus);
  BpeVocab v = train_bpe(corpus, BpeVocab::kNumSpecials + base);
  CHECK(v.merges.empty());
  CHECK(v.size() == BpeVocab::kNumSpecials + base);
  CHECK_THROWS_AS(train_bpe(corpus, BpeVocab::kNumSpecials + base - 1), std::invalid_argument);
}

TEST_CASE("training is deterministic") {
  std::vector<std::string> corpus{"red solid heel footwear", "red solid sneaker footwear",
                                  "blue striped heel footwear"};
  BpeVocab v1 = train_bpe(corpus, 40);
  BpeVocab v2 = train_bpe(corpus, 40);
  CHECK(v1.merges == v2.merges);
  CHECK(v1.id_to_token == v2.id_to_token);
}

TEST_CASE("merge count saturates at the supported maximum") {
  // "no pair repeats" stops training even with budget left
  BpeVocab v = train_bpe({"ab cd"}, 100);
  CHECK(v.merges.empty());

  std::vector<std::string> corpus{"aaaa aaaa"};
  BpeVocab v2 = train_bpe(corpus, 100);
  CHECK(v2.size() < 100);
  // every merged token is reproducible by applying merges in order
  for (const auto& [l, r] : v2.merges) CHECK(v2.id_of(l + r) > 2);
}

TEST_CASE("encode basics") {
  BpeVocab v = train_bpe({"heel heel heel sneaker"}, 60);
  CHECK(encode("", v).empty());

  SUBCASE("training words never map to UNK") {
    for (int id : encode("heel sneaker", v)) CHECK(id != BpeVocab::kUnkId);
  }
  SUBCASE("unknown base symbols map to UNK") {
    // 'Z' unseen; s, n, k, e and "r</w>" all occur in "sneaker"
    auto ids = encode("snZker", v);
    CHECK(std::count(ids.begin(), ids.end(), BpeVocab::kUnkId) == 1);
  }
  SUBCASE("PAD and MASK are never emitted") {
    for (int id : encode("heel sneaker heel", v)) {
      CHECK(id != BpeVocab::kPadId);
      CHECK(id != BpeVocab::kMaskId);
    }
  }
  SUBCASE("encoded length never exceeds character count") {
    std::string text = "heel sneaker heel heel";
    CHECK(encode(text, v).size() <= text.size());
  }
}

TEST_CASE("decode basics") {
  BpeVocab v = train_bpe({"peep toe heel"}, 40);
  CHECK(decode({}, v) == "");
  CHECK(decode(encode("toe", v), v) == "toe");
  CHECK(decode({BpeVocab::kMaskId}, v) == "[MASK]");
  CHECK_THROWS_AS(decode({static_cast<int>(v.size())}, v), std::out_of_range);
}

TEST_CASE("round-trip over synthetic corpora") {
  Rng rng(31);
  std::vector<std::string> words{"red", "blue", "solid", "striped", "heel", "sneaker",
                                 "kurta", "saree", "women", "men", "shoetopia", "."};
  std::vector<std::string> corpus;
  for (int s = 0; s < 50; ++s) {
    std::string text;
    size_t n = 3 + rng.below(15);
    for (size_t i = 0; i < n; ++i) {
      if (i) text += ' ';
      text += words[rng.below(words.size())];
    }
    corpus.push_back(text);
  }
  BpeVocab v = train_bpe(corpus, 120);
  for (const auto& text : corpus) {
    auto ids = encode(text, v);
    CHECK(decode(ids, v) == text);
    CHECK(ids.size() <= text.size());
  }
}

TEST_CASE("vocab file round-trips") {
  BpeVocab v = train_bpe({"red solid heel footwear . blue heel"}, 64);
  save_vocab(v, "/tmp/vocab_rt.json");
  BpeVocab v2 = load_vocab("/tmp/vocab_rt.json");
  CHECK(v2.id_to_token == v.id_to_token);
  CHECK(v2.merges == v.merges);
  CHECK(encode("red heel", v2) == encode("red heel", v));

  save_vocab(v2, "/tmp/vocab_rt2.json");
  std::ifstream a("/tmp/vocab_rt.json"), b("/tmp/vocab_rt2.json");
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);

  CHECK_THROWS_AS(load_vocab("/tmp/definitely_missing.json"), std::runtime_error);
}

TEST_CASE("empty corpus rejected") {
  CHECK_THROWS_AS(train_bpe({}, 100), std::invalid_argument);
  CHECK_THROWS_AS(train_bpe({"", "  "}, 100), std::invalid_argument);
}
