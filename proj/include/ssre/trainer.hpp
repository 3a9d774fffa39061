#ifndef SSRE_TRAINER_HPP
#define SSRE_TRAINER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ssre/corpus.hpp"
#include "ssre/encoder.hpp"
#include "ssre/remix.hpp"
#include "ssre/rng.hpp"

namespace ssre {

// A formatted statement after vocabulary lookup. Marker positions matter
// only to the marker-concat readout; the cls readout ignores them.
struct EncodedInput {
  std::vector<int> ids;
  int head_pos = 0;
  int tail_pos = 0;
};

struct TrainExample {
  EncodedInput x;
  LabelDistribution y;  // one-hot for gold data
};

struct TrainConfig {
  double T = 1.0;          // sharpening temperature
  double gamma = 0.0;      // confidence threshold
  double alpha = 60.0;     // mixing Beta shapes
  double beta = 60.0;
  double gamma_m = 1.0;    // unsupervised loss weight
  int K = 2;               // augmentations per unlabelled point
  int B = 8;               // mini-batch size
  double lr = 5e-5;
  double warmup_ratio = 0.1;
  int patience = 5;        // epochs without dev improvement before stopping
  int max_epochs = 30;     // learning rate horizon and hard stop
  uint64_t seed = 0;
  bool mixup = true;       // latent interpolation on unsupervised pairs
  std::vector<int> mix_layers{2, 3, 4};

  void validate() const;  // throws ConfigError
  MixSpec mix_spec() const;
};

// Unlabelled originals with their cached augmentations. The merged view
// X_ua lists the originals first, then augmentations grouped by original;
// every augmentation shares its original's pseudo-label by construction.
class UnlabelledPool {
 public:
  UnlabelledPool() = default;
  // augmentations must be empty or hold the same count for every original.
  static UnlabelledPool build(
      std::vector<EncodedInput> originals,
      std::vector<std::vector<EncodedInput>> augmentations);

  bool empty() const { return originals_.empty(); }
  int num_originals() const { return static_cast<int>(originals_.size()); }
  int K() const { return k_; }
  int size() const { return num_originals() * (1 + k_); }  // |X_ua|
  const EncodedInput& merged(int idx) const;
  int original_of(int idx) const;
  const EncodedInput& original(int i) const { return originals_[i]; }
  const std::vector<EncodedInput>& augs_of(int i) const {
    return augmentations_[i];
  }

 private:
  std::vector<EncodedInput> originals_;
  std::vector<std::vector<EncodedInput>> augmentations_;
  int k_ = 0;
};

// Arithmetic mean of equally-sized distributions.
LabelDistribution average_distributions(
    const std::vector<LabelDistribution>& dists);

// Ensemble pseudo-label: mean of the model's predictions on the original
// and its augmentations. Computed without recording, so no gradient ever
// flows through a pseudo-label.
LabelDistribution pseudo_label(Encoder& encoder, const EncodedInput& x,
                               const std::vector<EncodedInput>& augs);

// Entry-wise power 1/T then L1 normalization. T == 1 returns the input
// unchanged, bit for bit. Entries are floored at 1e-12 before powering so
// degenerate inputs cannot underflow to an all-zero vector.
LabelDistribution sharpen(const LabelDistribution& y, double T);

// 1 iff both maxima strictly exceed gamma.
double confidence_mask(const LabelDistribution& y_s,
                       const LabelDistribution& y_t, double gamma);

// One unsupervised pair, frozen: everything the loss term needs with the
// target fixed as a constant.
struct PairDraw {
  EncodedInput s;
  EncodedInput t;
  LabelDistribution target;  // mix of the sharpened pseudo-labels
  double weight = 0.0;       // confidence mask
  double lambda = 1.0;
  int layer = 1;
};

// Draws B pairs. Per pair the stream order is fixed: s, then t, then
// lambda, then the mix layer. With mixup disabled only s is drawn and the
// pair degenerates to (s, s) at lambda 1 with a one-sided mask.
std::vector<PairDraw> draw_unsup_batch(Encoder& encoder,
                                       const UnlabelledPool& pool,
                                       const TrainConfig& cfg, Rng& rng);

// (1/B) sum_b weight_b * CE(target_b || p(REMix(s_b, t_b))) as a graph
// node. Pairs with weight 0 are skipped entirely and contribute exactly 0.
Var unsup_loss_from_draws(Graph& g, Encoder& encoder,
                          const std::vector<PairDraw>& draws);

struct UnsupResult {
  double value = 0.0;
  double masked_fraction = 0.0;
};

// Value-only evaluation of the unsupervised loss on a fresh batch.
UnsupResult unsup_loss(Encoder& encoder, const UnlabelledPool& pool,
                       const TrainConfig& cfg, Rng& rng);

// Mean cross-entropy of the batch as a graph node.
Var sup_loss_graph(Graph& g, Encoder& encoder,
                   const std::vector<TrainExample>& batch);
double sup_loss(Encoder& encoder, const std::vector<TrainExample>& batch);

double total_loss(double sup, double unsup, double gamma_m);

struct ClassMetrics {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;
  double recall = 0.0;
};

struct EvalResult {
  double micro_f1 = 0.0;
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  std::vector<ClassMetrics> per_class;  // index 0 is the excluded NA class
};

// Micro scores pool TP/FP/FN over classes 1..C-1; class 0 (NA) counts
// neither as a gold nor as a predicted positive.
EvalResult evaluate_predictions(const std::vector<int>& pred,
                                const std::vector<int>& gold, int num_labels);
EvalResult evaluate(Encoder& encoder, const std::vector<TrainExample>& data);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double sup_loss = 0.0;
  double unsup_loss = 0.0;
  double masked_fraction = 0.0;
  double dev_f1 = 0.0;
  double lr = 0.0;
};

struct FitResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_f1 = 0.0;
};

// Mini-batch training of L_sup + gamma_m * L_unsp with per-batch pseudo
// labels, AdamW under a warmup/decay schedule, and dev-driven early
// stopping: training halts once `patience` epochs pass without a strict
// dev-F1 improvement, and the encoder is left holding the best-epoch
// parameters. With gamma_m == 0 or an empty pool the unsupervised stream
// is never touched, so such a run is step-identical to supervised-only
// training. Writes one JSONL metric line per epoch when metrics_path is
// non-empty.
FitResult fit(Encoder& encoder, const std::vector<TrainExample>& labelled,
              const UnlabelledPool& pool,
              const std::vector<TrainExample>& dev, const TrainConfig& cfg,
              const AdamWConfig& opt = {},
              const std::string& metrics_path = "");

}  // namespace ssre

#endif  // SSRE_TRAINER_HPP
