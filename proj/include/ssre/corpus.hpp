#ifndef SSRE_CORPUS_HPP
#define SSRE_CORPUS_HPP

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ssre {

// Special tokens shared across the pipeline.
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kHeadOpen = "[E1]";
inline constexpr const char* kHeadClose = "[/E1]";
inline constexpr const char* kTailOpen = "[E2]";
inline constexpr const char* kTailClose = "[/E2]";
inline constexpr const char* kSubjectMark = "@";
inline constexpr const char* kObjectMark = "&";
inline constexpr const char* kTypeSep = "*";

// Half-open token index range.
struct Span {
  int start = 0;
  int end = 0;
  int size() const { return end - start; }
  bool overlaps(const Span& o) const { return start < o.end && o.start < end; }
};

// A sentence with designated head and tail entity spans, optional entity
// types, and an optional relation label.
struct RelationStatement {
  std::vector<std::string> tokens;
  Span head;
  Span tail;
  std::optional<std::string> head_type;
  std::optional<std::string> tail_type;
  std::optional<std::string> label;

  bool typed() const { return head_type.has_value(); }
  std::vector<std::string> head_phrase() const;
  std::vector<std::string> tail_phrase() const;

  // Throws DataError if spans are out of bounds, empty, or overlapping, or
  // if exactly one of the two entity types is present.
  void validate() const;
};

// Relation name inventory with the no-relation label pinned to index 0.
struct LabelVocab {
  std::vector<std::string> relations;

  static LabelVocab from_labels(const std::vector<std::string>& labels,
                                const std::string& na_name);
  int size() const { return static_cast<int>(relations.size()); }
  int index_of(const std::string& name) const;  // throws DataError if absent
  const std::string& na() const { return relations[0]; }
};

// Probability vector over the relation inventory. Holds one-hot gold labels
// and soft pseudo-labels alike.
struct LabelDistribution {
  Eigen::VectorXd probs;

  static LabelDistribution one_hot(int index, int size);
  // Throws DataError unless entries are >= 0 and sum to 1 within 1e-6.
  void validate() const;
  int argmax() const;
  double max() const { return probs.maxCoeff(); }
};

enum class MarkerScheme { entity_markers, type_markers };

// A marker-augmented token sequence ready for the encoder.
struct FormattedInput {
  std::vector<std::string> tokens;  // tokens[0] is the classification token
  int head_marker_pos = 0;          // index of the first marker token of each
  int tail_marker_pos = 0;          //   entity ([E1]/[E2] or @/&)
  MarkerScheme scheme = MarkerScheme::entity_markers;
  // For each formatted position, the index into the original token list, or
  // -1 for inserted marker material. Supports round-trip checks and audits.
  std::vector<int> source_index;

  int length() const { return static_cast<int>(tokens.size()); }
  // Original tokens recovered by dropping inserted positions.
  std::vector<std::string> strip_markers() const;
};

// Fractions and seed for stratified subset selection.
struct SplitSpec {
  double labelled_fraction = 0.0;   // in (0, 1]
  double unlabelled_fraction = 0.0; // in [0, 1)
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Index-level result of a stratified split; the three parts partition
// [0, n) and each index refers to the input dataset.
struct SplitResult {
  std::vector<int> labelled;
  std::vector<int> unlabelled;
  std::vector<int> remainder;
  SplitSpec spec;
};

struct DatasetStats {
  int num_relations = 0;  // distinct labels observed, NA included
  int num_examples = 0;
  double na_fraction = 0.0;
};

// JSONL ingestion. One record per line:
//   {"tokens": [...], "head": [s,e], "tail": [s,e],
//    "head_type": str|null, "tail_type": str|null, "relation": str|null}
// Parse and span errors carry the 1-based line number. A dataset must be
// uniformly typed or untyped.
std::vector<RelationStatement> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<RelationStatement>& data,
                const std::string& path);
std::string statement_to_json(const RelationStatement& s);
RelationStatement statement_from_json(const std::string& line);

// Wrap entities in [E1]...[/E1] / [E2]...[/E2] and prepend the
// classification token.
FormattedInput format_entity_markers(const RelationStatement& stmt);

// Render the head entity as "@ * <type words> * <entity> @" and the tail as
// "& * <type words> * <entity> &". Type labels are lowercased with
// underscores turned into spaces. Requires both entity types.
FormattedInput format_type_markers(const RelationStatement& stmt);

// The word tokens a type label contributes to marker rendering:
// "STATE_OR_PROVINCE" -> {"state", "or", "province"}.
std::vector<std::string> type_label_words(const std::string& type_label);

// Per-relation subset selection: each class contributes round(fraction *
// class count) members to a part, within +/-1. Deterministic given the seed;
// the parts are disjoint and together exhaust the input.
SplitResult stratified_split(const std::vector<RelationStatement>& data,
                             const SplitSpec& spec);

DatasetStats dataset_stats(const std::vector<RelationStatement>& data,
                           const LabelVocab& vocab);

// Split manifest round-trip (JSONL: header line with the spec, then one line
// per part with its sorted record indices).
void save_split_manifest(const SplitResult& split, const std::string& path);
SplitResult load_split_manifest(const std::string& path);

}  // namespace ssre

#endif  // SSRE_CORPUS_HPP
