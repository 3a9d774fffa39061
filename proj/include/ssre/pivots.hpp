#ifndef SSRE_PIVOTS_HPP
#define SSRE_PIVOTS_HPP

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssre/augment.hpp"

namespace ssre {

// Deterministic toy sequence-to-sequence model: a pure function of the
// source fixes a preferred target, and each step puts `peak` probability
// on the next preferred token (eos past the end), smoothing the remainder
// uniformly so every token stays reachable for constrained decoding.
// Caches the preferred target of the last source seen.
class PointerModel : public TranslationModel {
 public:
  using TargetFn =
      std::function<std::vector<std::string>(const std::vector<std::string>&)>;

  PointerModel(std::vector<std::string> vocab, double peak, TargetFn target_fn);

  const std::vector<std::string>& vocab() const override { return vocab_; }
  int eos_id() const override { return static_cast<int>(vocab_.size()) - 1; }
  Eigen::VectorXd step(const std::vector<std::string>& source,
                       const std::vector<std::string>& prefix) const override;

 private:
  std::vector<std::string> vocab_;  // ends with the eos symbol
  double peak_;
  TargetFn target_fn_;
  std::unordered_map<std::string, int> index_;
  mutable std::vector<std::string> cached_source_;
  mutable std::vector<int> cached_target_ids_;
  mutable bool cache_valid_ = false;
};

// Deterministic but structureless scorer: the log-distribution comes from a
// hash of (seed, source, prefix), so beam search order genuinely matters.
// Used to stress the decoders against enumeration oracles.
class HashModel : public TranslationModel {
 public:
  HashModel(std::vector<std::string> vocab, uint64_t seed);

  const std::vector<std::string>& vocab() const override { return vocab_; }
  int eos_id() const override { return static_cast<int>(vocab_.size()) - 1; }
  Eigen::VectorXd step(const std::vector<std::string>& source,
                       const std::vector<std::string>& prefix) const override;

 private:
  std::vector<std::string> vocab_;
  uint64_t seed_;
};

using SubstitutionTable = std::map<std::string, std::string>;
using SynonymTable = std::map<std::string, std::vector<std::string>>;

// Plain-text tables, one mapping per line: "from to" for substitutions,
// "word syn1 [syn2 ...]" for synonyms. Whitespace separated.
void save_substitution_table(const SubstitutionTable& table,
                             const std::string& path);
SubstitutionTable load_substitution_table(const std::string& path);
void save_synonym_table(const SynonymTable& table, const std::string& path);
SynonymTable load_synonym_table(const std::string& path);

// token -> next token over the given inventory; a derangement, so it is
// invertible and never maps a token to itself.
SubstitutionTable make_rotation_cipher(const std::vector<std::string>& tokens);

// Copies the sentence out and back unchanged.
PivotPair make_identity_pivot(const std::vector<std::string>& tokens);

// Forward substitutes every token through an invertible cipher; backward
// inverts it and, for tokens with synonyms, deterministically prefers a
// synonym at a seeded fraction of positions. Constrained decoding is what
// keeps entity phrases verbatim despite those preferences.
PivotPair make_cipher_pivot(const std::vector<std::string>& tokens,
                            const SubstitutionTable& cipher,
                            const SynonymTable& synonyms, uint64_t seed,
                            double synonym_rate);

// Reorders tokens within clauses (bounded by , . ; ! ?) on both legs,
// seeded separately per direction.
PivotPair make_shuffle_pivot(const std::vector<std::string>& tokens,
                             uint64_t seed);

}  // namespace ssre

#endif  // SSRE_PIVOTS_HPP
