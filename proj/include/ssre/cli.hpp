#ifndef SSRE_CLI_HPP
#define SSRE_CLI_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssre/augment.hpp"
#include "ssre/corpus.hpp"
#include "ssre/encoder.hpp"
#include "ssre/pivots.hpp"
#include "ssre/trainer.hpp"

namespace ssre {

// Flat "key = value" configuration with dotted section names. '#' starts a
// comment, lists are comma separated, duplicate keys are rejected with the
// line number.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);
// One "key=value" command-line override applied on top of the file.
void apply_override(ConfigMap& map, const std::string& assignment);
std::string dump_config(const ConfigMap& map);  // one sorted key per line

MarkerScheme marker_scheme_from_string(const std::string& name);
std::string to_string(MarkerScheme scheme);

// Template-generated relation statements: the relation is a deterministic
// function of a connective token between two typed entity slots. Entity
// names are drawn from one shared pool regardless of type, so the types
// carry information the surface form does not. Each relation owns a set of
// connective_variants interchangeable connectives; a small labelled sample
// tends to miss some variants, which is what leaves unlabelled data room
// to help. The first confusable_pairs relation pairs (0,1), (2,3), ...
// share their connective set and differ only in their type signature; the
// rest get a set of their own. Negative examples use non-relational
// connectives under the same type signatures the relations use, so the
// types alone never decide between a relation and NA.
struct SyntheticCorpusSpec {
  int num_relations = 8;
  int templates_per_relation = 3;
  int vocab_size = 60;  // distractor token pool
  int num_examples = 2000;
  double na_fraction = 0.25;
  int connective_variants = 6;
  int confusable_pairs = 0;
  std::vector<std::string> entity_types{"PERSON", "ORGANIZATION", "LOCATION",
                                        "EVENT", "WORK"};
  uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

struct SyntheticCorpus {
  std::vector<RelationStatement> statements;
  // Distractors map to distractors and connective variants map within
  // their own set, so applying a synonym never changes the label.
  SynonymTable synonyms;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

// The sidecar file a corpus' synonym table lives in: the corpus path with
// its .jsonl suffix replaced by .synonyms.tsv.
std::string synonyms_sidecar(const std::string& corpus_path);

// Everything an experiment run needs, resolved from one flat config.
// from_map is strict: unknown keys, malformed values, and out-of-range
// settings all raise ConfigError before any command writes a file.
struct ExperimentConfig {
  std::string data_path;
  std::string out_dir = "run";

  SyntheticCorpusSpec synth;
  SplitSpec split;

  std::vector<std::string> pivots{"cipher", "shuffle"};
  std::string synonyms_path;  // empty: use the corpus sidecar when present
  double aug_temperature = 0.0;
  double synonym_rate = 0.9;
  DecodeOptions decode;
  uint64_t aug_seed = 1;

  EncoderConfig encoder;  // vocab_size and num_labels are filled per run
  MarkerScheme markers = MarkerScheme::type_markers;
  uint64_t encoder_seed = 1;

  TrainConfig train;
  std::string eval_split = "dev";  // labelled | unlabelled | dev | all

  // Search axes in their fixed visit order; only T, gamma, beta, and
  // gamma_m are legal axis names.
  std::vector<std::pair<std::string, std::vector<double>>> grid;

  static ExperimentConfig from_map(const ConfigMap& map);
  ConfigMap to_map() const;  // complete resolved key set; round-trips
  void validate() const;

  std::string corpus_path() const;  // data_path or out_dir/corpus.jsonl
  std::string manifest_path() const;
  std::string cache_path() const;
  std::string checkpoint_path() const;
  std::string metrics_path() const;
  std::string vocab_path() const;
  std::string labels_path() const;
  std::string resolved_config_path() const;
  std::string trials_path() const;
  std::string eval_path() const;
};

// A formatted statement turned into encoder ids with its marker positions.
EncodedInput encode_formatted(const TokenVocab& vocab,
                              const FormattedInput& input);

// Corpus + manifest + optional augmentation cache, encoded and ready to
// train on: labelled examples, the remainder as the dev set, and the
// unlabelled pool (with cached augmentations when train.k > 0).
struct EncodedDataset {
  LabelVocab labels;
  TokenVocab vocab;
  std::vector<TrainExample> labelled;
  std::vector<TrainExample> dev;
  UnlabelledPool pool;
  int max_formatted_len = 0;
};

EncodedDataset assemble_dataset(const ExperimentConfig& cfg);

struct SynthSummary {
  DatasetStats stats;
  std::string corpus_path;
  std::string synonyms_path;
};

struct SplitSummary {
  int labelled = 0;
  int unlabelled = 0;
  int remainder = 0;
  std::string manifest_path;
};

struct AugmentSummary {
  int records = 0;
  int attempts = 0;   // records x pivots
  int satisfied = 0;  // constrained decode succeeded
  int fallbacks = 0;  // unsatisfiable, original copied
  int failures = 0;   // other per-record errors, logged and copied
  std::string cache_path;
};

struct TrainSummary {
  FitResult fit;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string config_path;
};

struct EvalSummary {
  EvalResult result;
  int examples = 0;
  std::string eval_path;
};

struct GridTrial {
  std::string param;
  double value = 0.0;
  double dev_f1 = 0.0;
  int best_epoch = 0;
};

struct GridSummary {
  std::vector<GridTrial> trials;
  TrainConfig best;
  double best_f1 = 0.0;
  std::string trials_path;
};

// Commands. Each validates its full configuration before writing anything.
SynthSummary cmd_synth(const ExperimentConfig& cfg);
SplitSummary cmd_split(const ExperimentConfig& cfg);
AugmentSummary cmd_augment(const ExperimentConfig& cfg);
TrainSummary cmd_train(const ExperimentConfig& cfg);
EvalSummary cmd_eval(const ExperimentConfig& cfg);
GridSummary cmd_gridsearch(const ExperimentConfig& cfg);

// Pivot construction over a corpus token inventory; names from
// {identity, cipher, shuffle}.
std::vector<PivotPair> build_pivots(const ExperimentConfig& cfg,
                                    const std::vector<std::string>& inventory,
                                    const SynonymTable& synonyms);

// The augmentation loop behind cmd_augment, separable so failing pivots
// can be injected: one augmentation per pivot per unlabelled record, with
// unsatisfiable decodes falling back to a copy of the original.
AugmentSummary run_augmentation(const std::vector<RelationStatement>& corpus,
                                const std::vector<int>& unlabelled,
                                const std::vector<PivotPair>& pivots,
                                const ExperimentConfig& cfg);

// One grid axis applied to a base configuration; the axis name must be one
// of T, gamma, beta, gamma_m.
TrainConfig with_grid_value(TrainConfig base, const std::string& param,
                            double value);

}  // namespace ssre

#endif  // SSRE_CLI_HPP
