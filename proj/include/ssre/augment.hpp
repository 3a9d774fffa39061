#ifndef SSRE_AUGMENT_HPP
#define SSRE_AUGMENT_HPP

#include <Eigen/Core>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssre/corpus.hpp"
#include "ssre/rng.hpp"

namespace ssre {

// Sequence-to-sequence scoring interface the decoder searches over.
// Implementations must be deterministic given (source, prefix) and return a
// valid log-distribution over vocab(), whose eos_id() entry ends a
// hypothesis.
class TranslationModel {
 public:
  virtual ~TranslationModel() = default;
  virtual const std::vector<std::string>& vocab() const = 0;
  virtual int eos_id() const = 0;
  virtual Eigen::VectorXd step(const std::vector<std::string>& source,
                               const std::vector<std::string>& prefix) const = 0;
};

// Token phrases that must appear contiguously in decoder output. Order is
// meaningful to callers (head first, then tail); duplicate phrases are
// allowed and each duplicate demands its own disjoint occurrence.
struct ConstraintSet {
  std::vector<std::vector<std::string>> phrases;

  static ConstraintSet for_statement(const RelationStatement& stmt);
  bool empty() const { return phrases.empty(); }
  int total_tokens() const;
  void validate() const;  // throws DataError on an empty phrase
};

// Progress of the constraint automata over an emitted prefix. Both fields
// are pure functions of the emitted tokens: count holds greedy
// non-overlapping occurrence counts per distinct phrase, progress the
// current partial-match length.
struct Coverage {
  std::vector<int> progress;
  std::vector<int> count;
};

// Matching machinery shared by the decoder and span relocation.
class ConstraintAutomaton {
 public:
  explicit ConstraintAutomaton(const ConstraintSet& constraints);

  Coverage initial() const;
  Coverage advance(const Coverage& cov, const std::string& token) const;
  // Recomputes coverage from scratch; advance() must agree with this.
  Coverage rederive(const std::vector<std::string>& tokens) const;

  // Number of constraint tokens a hypothesis has locked in; the decoder
  // banks hypotheses by this value.
  int covered_tokens(const Coverage& cov) const;
  int total_tokens() const { return total_tokens_; }
  // Every phrase has at least as many non-overlapping occurrences as
  // demanded. Necessary but not sufficient for a disjoint assignment when
  // distinct phrases overlap in the output.
  bool satisfied(const Coverage& cov) const;

  // One span per constraint (input order), pairwise disjoint, chosen
  // lexicographically earliest by start positions. nullopt when no
  // disjoint assignment exists.
  static std::optional<std::vector<Span>> find_disjoint_spans(
      const std::vector<std::string>& tokens, const ConstraintSet& constraints);

 private:
  std::vector<std::vector<std::string>> phrases_;  // distinct phrases
  std::vector<int> need_;                          // required occurrences
  std::vector<std::vector<int>> failure_;          // KMP tables
  int total_tokens_ = 0;
};

// Search state: emitted tokens, cumulative log-probability, and constraint
// coverage (empty for unconstrained search).
struct BeamHypothesis {
  std::vector<std::string> tokens;
  double score = 0.0;
  Coverage coverage;
};

// Breadth-first beam decode. A hypothesis finishes by emitting eos; at
// max_len emitted tokens eos is the only continuation. Returns every
// finalist that won a beam slot, best score first, ties resolved by
// finalization order. Never empty.
std::vector<BeamHypothesis> beam_search(const TranslationModel& model,
                                        const std::vector<std::string>& source,
                                        int beam, int max_len);

// Beam decode where finalists must contain every constraint phrase
// contiguously at pairwise-disjoint positions. Beam slots are spread
// across banks keyed by locked-in constraint tokens, so partially
// constrained hypotheses survive pruning. With an empty constraint set
// this reduces to exactly one bank holding the whole beam and reproduces
// beam_search bit for bit. Throws UnsatisfiableError when no
// constraint-complete finalist exists within max_len.
std::vector<std::string> constrained_beam_search(
    const TranslationModel& model, const std::vector<std::string>& source,
    const ConstraintSet& constraints, int beam, int max_len);

// Temperature-scaled choice among finalists: softmax of scores/temperature,
// sampled with rng; temperature 0 picks the best deterministically.
const BeamHypothesis& sample_finalist(
    const std::vector<BeamHypothesis>& finalists, double temperature,
    Rng& rng);

// A pivot language round trip: forward out of the source language,
// backward into it.
struct PivotPair {
  std::string name;
  std::shared_ptr<TranslationModel> forward;
  std::shared_ptr<TranslationModel> backward;
};

struct DecodeOptions {
  int beam = 8;       // raised automatically to the bank count when needed
  int extra_len = 8;  // max_len slack over the input length
};

// Translate the sentence into the pivot language (unconstrained, sampled
// among finalists by temperature), translate it back under the entity
// constraints, and re-locate the entity spans at the earliest disjoint
// occurrences. Label and types are copied. Propagates UnsatisfiableError.
RelationStatement back_translate(const RelationStatement& stmt,
                                 const PivotPair& pivot, double temperature,
                                 Rng& rng, const DecodeOptions& opts = {});

// One augmentation per pivot; a pivot whose decode is unsatisfiable
// contributes a copy of the original, so the count always matches.
std::vector<RelationStatement> generate_augmentations(
    const RelationStatement& stmt, const std::vector<PivotPair>& pivots,
    double temperature, Rng& rng, const DecodeOptions& opts = {});

// JSONL cache: line i pairs record index i with its K augmentations.
void save_augmentation_cache(
    const std::vector<std::vector<RelationStatement>>& cache,
    const std::string& path);
std::vector<std::vector<RelationStatement>> load_augmentation_cache(
    const std::string& path);

}  // namespace ssre

#endif  // SSRE_AUGMENT_HPP
