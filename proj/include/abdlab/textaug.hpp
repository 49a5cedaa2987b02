#pragma once

// Caption augmentation: synonym replacement, random insertion, random swap
// and random deletion over a built-in synonym lexicon.

#include "abdlab/dataset.hpp"

namespace abdlab {

// word -> synonyms, symmetric, no word is its own synonym, all in-vocab.
struct SynonymLexicon {
  std::unordered_map<std::string, std::vector<std::string>> groups;

  static const SynonymLexicon& builtin();

  const std::vector<std::string>* synonyms(const std::string& w) const {
    auto it = groups.find(w);
    return it == groups.end() ? nullptr : &it->second;
  }

  json to_json() const {
    json j = json::object();
    std::vector<std::string> keys;
    for (const auto& [w, _] : groups) keys.push_back(w);
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) j[k] = groups.at(k);
    return j;
  }
};

inline const SynonymLexicon& SynonymLexicon::builtin() {
  static const SynonymLexicon lex = [] {
    const std::vector<std::vector<std::string>> sets = {
        {"photo", "picture", "snapshot", "photograph", "shot", "pic"},
        {"image", "figure", "illustration", "graphic"},
        {"showing", "depicting", "displaying", "presenting"},
        {"dark", "dim", "murky", "shadowy"},
        {"light", "bright", "pale", "luminous"},
        {"small", "tiny", "little", "petite"},
        {"large", "big", "huge", "giant"},
        {"on", "upon", "atop", "against"},
        {"background", "backdrop", "setting", "scene"},
    };
    SynonymLexicon l;
    const Vocab& vocab = Vocab::builtin();
    for (const auto& set : sets)
      for (const auto& w : set) {
        vocab.id(w);  // every lexicon word must be in the vocabulary
        auto& g = l.groups[w];
        for (const auto& other : set)
          if (other != w) g.push_back(other);
      }
    return l;
  }();
  return lex;
}

using Words = std::vector<std::string>;

// Replace up to n lexicon-covered words (distinct positions) with a random
// synonym; length is preserved.
inline Words synonym_replace(Words words, int n, Rng& rng,
                             const SynonymLexicon& lex = SynonymLexicon::builtin()) {
  if (n < 0) throw std::invalid_argument("synonym_replace: n must be >= 0");
  std::vector<size_t> covered;
  for (size_t i = 0; i < words.size(); ++i)
    if (lex.synonyms(words[i])) covered.push_back(i);
  for (int k = 0; k < n && !covered.empty(); ++k) {
    const size_t pick = rng.below(covered.size());
    const size_t pos = covered[pick];
    covered.erase(covered.begin() + ptrdiff_t(pick));
    const auto& syns = *lex.synonyms(words[pos]);
    words[pos] = syns[rng.below(syns.size())];
  }
  return words;
}

// n times: pick a random lexicon-covered word of the current sentence and
// insert one of its synonyms at a random position. Capped at max_len.
inline Words random_insert(Words words, int n, Rng& rng, int max_len = kMaxCaptionLen,
                           const SynonymLexicon& lex = SynonymLexicon::builtin()) {
  if (n < 0) throw std::invalid_argument("random_insert: n must be >= 0");
  for (int k = 0; k < n; ++k) {
    if (int(words.size()) >= max_len) break;
    std::vector<size_t> covered;
    for (size_t i = 0; i < words.size(); ++i)
      if (lex.synonyms(words[i])) covered.push_back(i);
    if (covered.empty()) break;
    const auto& syns = *lex.synonyms(words[covered[rng.below(covered.size())]]);
    const std::string syn = syns[rng.below(syns.size())];
    const size_t at = rng.below(words.size() + 1);
    words.insert(words.begin() + ptrdiff_t(at), syn);
  }
  return words;
}

// n random transpositions of two distinct positions; token multiset preserved.
inline Words random_swap(Words words, int n, Rng& rng) {
  if (n < 0) throw std::invalid_argument("random_swap: n must be >= 0");
  if (words.size() < 2) return words;
  for (int k = 0; k < n; ++k) {
    const size_t i = rng.below(words.size());
    size_t j = rng.below(words.size() - 1);
    if (j >= i) ++j;
    std::swap(words[i], words[j]);
  }
  return words;
}

// Delete each word independently with probability p; if everything would be
// deleted, keep one uniformly chosen word.
inline Words random_delete(const Words& words, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("random_delete: p must be in [0,1]");
  Words out;
  for (const auto& w : words)
    if (rng.uniform() >= p) out.push_back(w);
  if (out.empty() && !words.empty())
    out.push_back(words[rng.below(words.size())]);
  return out;
}

enum class EdaOp { synonym_replace, random_insert, random_swap, random_delete };

// One uniformly chosen operation per caption; n = max(1, round(alpha*len))
// for the counted operations, p = alpha for deletion.
inline std::string eda_augment(const std::string& caption, double alpha, Rng& rng,
                               int max_len = kMaxCaptionLen,
                               const SynonymLexicon& lex = SynonymLexicon::builtin()) {
  if (caption.empty()) throw std::invalid_argument("eda_augment: empty caption");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("eda_augment: alpha must be in [0,1]");
  Words words = split_words(caption);
  if (words.empty()) throw std::invalid_argument("eda_augment: blank caption");
  const int n = std::max(1, int(std::llround(alpha * double(words.size()))));
  const auto op = EdaOp(rng.below(4));
  Words out;
  switch (op) {
    case EdaOp::synonym_replace: out = synonym_replace(std::move(words), n, rng, lex); break;
    case EdaOp::random_insert: out = random_insert(std::move(words), n, rng, max_len, lex); break;
    case EdaOp::random_swap: out = random_swap(std::move(words), n, rng); break;
    case EdaOp::random_delete: out = random_delete(words, alpha, rng); break;
  }
  return join_words(out);
}

}  // namespace abdlab
