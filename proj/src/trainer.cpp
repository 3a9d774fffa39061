#include "ssre/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "ssre/errors.hpp"

namespace ssre {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(T > 0.0)) throw ConfigError("sharpening temperature must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ConfigError("confidence threshold must lie in [0, 1)");
  }
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ConfigError("mixing shape parameters must be positive");
  }
  if (!(gamma_m >= 0.0)) throw ConfigError("gamma_m must be non-negative");
  if (K < 0) throw ConfigError("K must be non-negative");
  if (B < 1) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("warmup ratio must lie in [0, 1)");
  }
  if (patience < 1) throw ConfigError("patience must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (mixup && mix_layers.empty()) {
    throw ConfigError("mixing enabled but no mix layers given");
  }
}

MixSpec TrainConfig::mix_spec() const {
  MixSpec spec;
  spec.alpha = alpha;
  spec.beta = beta;
  spec.layers = mix_layers;
  return spec;
}

UnlabelledPool UnlabelledPool::build(
    std::vector<EncodedInput> originals,
    std::vector<std::vector<EncodedInput>> augmentations) {
  UnlabelledPool pool;
  if (!augmentations.empty() && augmentations.size() != originals.size()) {
    throw DataError("augmentation lists do not pair up with the originals");
  }
  if (augmentations.empty()) augmentations.assign(originals.size(), {});
  size_t k = originals.empty() ? 0 : augmentations.front().size();
  for (const auto& a : augmentations) {
    if (a.size() != k) {
      throw DataError("originals carry different augmentation counts");
    }
  }
  pool.originals_ = std::move(originals);
  pool.augmentations_ = std::move(augmentations);
  pool.k_ = static_cast<int>(k);
  return pool;
}

const EncodedInput& UnlabelledPool::merged(int idx) const {
  int n = num_originals();
  if (idx < 0 || idx >= size()) throw DataError("merged index out of range");
  if (idx < n) return originals_[idx];
  int j = idx - n;
  return augmentations_[j / k_][j % k_];
}

int UnlabelledPool::original_of(int idx) const {
  int n = num_originals();
  if (idx < 0 || idx >= size()) throw DataError("merged index out of range");
  return idx < n ? idx : (idx - n) / k_;
}

LabelDistribution average_distributions(
    const std::vector<LabelDistribution>& dists) {
  if (dists.empty()) throw DataError("cannot average zero distributions");
  Eigen::VectorXd acc = dists.front().probs;
  for (size_t i = 1; i < dists.size(); ++i) {
    if (dists[i].probs.size() != acc.size()) {
      throw DataError("distributions of different sizes");
    }
    acc += dists[i].probs;
  }
  LabelDistribution out;
  out.probs = acc / static_cast<double>(dists.size());
  return out;
}

LabelDistribution pseudo_label(Encoder& encoder, const EncodedInput& x,
                               const std::vector<EncodedInput>& augs) {
  std::vector<LabelDistribution> preds;
  preds.reserve(augs.size() + 1);
  preds.push_back(encoder.predict(x.ids, all_valid(x.ids.size()), x.head_pos,
                                  x.tail_pos));
  for (const auto& a : augs) {
    preds.push_back(encoder.predict(a.ids, all_valid(a.ids.size()),
                                    a.head_pos, a.tail_pos));
  }
  return average_distributions(preds);
}

LabelDistribution sharpen(const LabelDistribution& y, double T) {
  if (!(T > 0.0)) throw ConfigError("sharpening temperature must be positive");
  if (T == 1.0) return y;  // identity exponent, exact
  LabelDistribution out;
  // Floor before powering so a zero entry cannot zero the whole vector.
  out.probs = y.probs.array().max(1e-12).pow(1.0 / T);
  out.probs /= out.probs.sum();
  return out;
}

double confidence_mask(const LabelDistribution& y_s,
                       const LabelDistribution& y_t, double gamma) {
  return (y_s.max() > gamma && y_t.max() > gamma) ? 1.0 : 0.0;
}

std::vector<PairDraw> draw_unsup_batch(Encoder& encoder,
                                       const UnlabelledPool& pool,
                                       const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (pool.empty()) throw DataError("cannot draw pairs from an empty pool");
  MixSpec spec = cfg.mix_spec();
  // Pseudo-labels are shared per original and frozen for this batch.
  std::unordered_map<int, LabelDistribution> labels;
  auto label_of = [&](int merged_idx) -> const LabelDistribution& {
    int orig = pool.original_of(merged_idx);
    auto it = labels.find(orig);
    if (it == labels.end()) {
      it = labels
               .emplace(orig, pseudo_label(encoder, pool.original(orig),
                                           pool.augs_of(orig)))
               .first;
    }
    return it->second;
  };

  std::vector<PairDraw> draws;
  draws.reserve(cfg.B);
  for (int b = 0; b < cfg.B; ++b) {
    PairDraw d;
    int s = static_cast<int>(rng.uniform_index(pool.size()));
    const LabelDistribution& y_s = label_of(s);
    d.s = pool.merged(s);
    if (cfg.mixup) {
      int t = static_cast<int>(rng.uniform_index(pool.size()));
      const LabelDistribution& y_t = label_of(t);
      d.t = pool.merged(t);
      d.lambda = sample_lambda(spec, rng);
      d.layer = sample_layer(spec, rng);
      d.weight = confidence_mask(y_s, y_t, cfg.gamma);
      d.target = mix_labels(sharpen(y_s, cfg.T), sharpen(y_t, cfg.T), d.lambda);
    } else {
      d.t = d.s;
      d.lambda = 1.0;
      d.layer = spec.layers.empty() ? 1 : spec.layers.front();
      d.weight = y_s.max() > cfg.gamma ? 1.0 : 0.0;
      d.target = sharpen(y_s, cfg.T);
    }
    draws.push_back(std::move(d));
  }
  return draws;
}

Var unsup_loss_from_draws(Graph& g, Encoder& encoder,
                          const std::vector<PairDraw>& draws) {
  if (draws.empty()) throw DataError("no pair draws given");
  int labels = encoder.config().num_labels;
  std::vector<Var> rows;
  std::vector<Eigen::VectorXd> targets;
  for (const auto& d : draws) {
    if (d.weight == 0.0) continue;  // masked terms contribute exactly 0
    Var pooled;
    if (d.lambda == 1.0 && d.s.ids == d.t.ids) {
      // Endpoint identity: the mix at lambda 1 equals the plain forward.
      pooled = encoder.encode_pooled(g, d.s.ids, all_valid(d.s.ids.size()),
                                     d.s.head_pos, d.s.tail_pos);
    } else {
      pooled = remix_forward(g, encoder, d.s.ids, d.t.ids, d.lambda, d.layer);
    }
    rows.push_back(encoder.classify(g, pooled));
    targets.push_back(d.target.probs);
  }
  if (rows.empty()) {
    return g.input(Eigen::MatrixXd::Zero(1, 1));  // all-masked batch
  }
  Eigen::MatrixXd target(rows.size(), labels);
  for (size_t i = 0; i < targets.size(); ++i) {
    target.row(i) = targets[i].transpose();
  }
  Var logits = rows.size() == 1 ? rows.front() : g.concat_rows(rows);
  Var mean_kept = g.cross_entropy_mean(
      logits, target, Eigen::VectorXd::Ones(static_cast<long long>(rows.size())));
  // Mean over the drawn batch, not just the surviving pairs.
  double kept_over_batch = static_cast<double>(rows.size()) /
                           static_cast<double>(draws.size());
  return g.scale(mean_kept, kept_over_batch);
}

UnsupResult unsup_loss(Encoder& encoder, const UnlabelledPool& pool,
                       const TrainConfig& cfg, Rng& rng) {
  auto draws = draw_unsup_batch(encoder, pool, cfg, rng);
  Graph g(false);
  UnsupResult r;
  r.value = g.value(unsup_loss_from_draws(g, encoder, draws))(0, 0);
  int masked = 0;
  for (const auto& d : draws) masked += d.weight == 0.0 ? 1 : 0;
  r.masked_fraction = static_cast<double>(masked) /
                      static_cast<double>(draws.size());
  return r;
}

Var sup_loss_graph(Graph& g, Encoder& encoder,
                   const std::vector<TrainExample>& batch) {
  if (batch.empty()) throw DataError("empty supervised batch");
  int labels = encoder.config().num_labels;
  std::vector<Var> rows;
  Eigen::MatrixXd target(batch.size(), labels);
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    if (ex.y.probs.size() != labels) {
      throw DataError("label width does not match the model");
    }
    Var pooled = encoder.encode_pooled(g, ex.x.ids,
                                       all_valid(ex.x.ids.size()),
                                       ex.x.head_pos, ex.x.tail_pos);
    rows.push_back(encoder.classify(g, pooled));
    target.row(i) = ex.y.probs.transpose();
  }
  Var logits = rows.size() == 1 ? rows.front() : g.concat_rows(rows);
  return g.cross_entropy_mean(
      logits, target, Eigen::VectorXd::Ones(static_cast<long long>(batch.size())));
}

double sup_loss(Encoder& encoder, const std::vector<TrainExample>& batch) {
  Graph g(false);
  return g.value(sup_loss_graph(g, encoder, batch))(0, 0);
}

double total_loss(double sup, double unsup, double gamma_m) {
  if (!std::isfinite(sup) || !std::isfinite(unsup)) {
    throw DataError("non-finite loss");
  }
  if (!(gamma_m >= 0.0)) throw ConfigError("gamma_m must be non-negative");
  return sup + gamma_m * unsup;
}

EvalResult evaluate_predictions(const std::vector<int>& pred,
                                const std::vector<int>& gold, int num_labels) {
  if (pred.size() != gold.size()) {
    throw DataError("prediction and gold lists differ in length");
  }
  if (num_labels < 1) throw ConfigError("num_labels must be positive");
  EvalResult r;
  r.per_class.assign(num_labels, {});
  for (size_t i = 0; i < pred.size(); ++i) {
    int p = pred[i];
    int gtruth = gold[i];
    if (p < 0 || p >= num_labels || gtruth < 0 || gtruth >= num_labels) {
      throw DataError("label index out of range");
    }
    if (p == gtruth && p != 0) r.per_class[p].tp++;
    if (p != gtruth && p != 0) r.per_class[p].fp++;
    if (p != gtruth && gtruth != 0) r.per_class[gtruth].fn++;
  }
  int tp = 0, fp = 0, fn = 0;
  for (int c = 1; c < num_labels; ++c) {
    auto& m = r.per_class[c];
    m.precision = m.tp + m.fp > 0
                      ? static_cast<double>(m.tp) / (m.tp + m.fp)
                      : 0.0;
    m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn)
                               : 0.0;
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  r.micro_precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.micro_recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  double pr = r.micro_precision + r.micro_recall;
  r.micro_f1 = pr > 0.0 ? 2.0 * r.micro_precision * r.micro_recall / pr : 0.0;
  return r;
}

EvalResult evaluate(Encoder& encoder, const std::vector<TrainExample>& data) {
  std::vector<int> pred, gold;
  pred.reserve(data.size());
  gold.reserve(data.size());
  for (const auto& ex : data) {
    auto d = encoder.predict(ex.x.ids, all_valid(ex.x.ids.size()),
                             ex.x.head_pos, ex.x.tail_pos);
    pred.push_back(d.argmax());
    gold.push_back(ex.y.argmax());
  }
  return evaluate_predictions(pred, gold, encoder.config().num_labels);
}

namespace {

std::vector<Eigen::MatrixXd> snapshot_values(ParamStore& params) {
  std::vector<Eigen::MatrixXd> values;
  for (const auto& t : params.all()) values.push_back(t->value);
  return values;
}

void restore_values(ParamStore& params, const std::vector<Eigen::MatrixXd>& values) {
  const auto& tensors = params.all();
  for (size_t i = 0; i < tensors.size(); ++i) tensors[i]->value = values[i];
}

}  // namespace

FitResult fit(Encoder& encoder, const std::vector<TrainExample>& labelled,
              const UnlabelledPool& pool,
              const std::vector<TrainExample>& dev, const TrainConfig& cfg,
              const AdamWConfig& opt, const std::string& metrics_path) {
  cfg.validate();
  if (labelled.empty()) throw DataError("no labelled training data");
  if (dev.empty()) throw DataError("no dev data for early stopping");
  bool use_unsup = cfg.gamma_m > 0.0 && !pool.empty();
  if (use_unsup && cfg.mixup) cfg.mix_spec().validate(encoder.config());

  int n = static_cast<int>(labelled.size());
  int steps_per_epoch = (n + cfg.B - 1) / cfg.B;
  LrSchedule schedule;
  schedule.peak = cfg.lr;
  schedule.warmup_ratio = cfg.warmup_ratio;
  schedule.total_steps =
      static_cast<long long>(cfg.max_epochs) * steps_per_epoch;

  AdamW optimizer(encoder.params(), opt);
  Rng rng_shuffle(derive_seed(cfg.seed, "train_shuffle"));
  Rng rng_unsup(derive_seed(cfg.seed, "train_unsup"));

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  std::vector<Eigen::MatrixXd> best_values = snapshot_values(encoder.params());
  long long global_step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng_shuffle.shuffle(order);
    double sup_sum = 0.0, unsup_sum = 0.0, mask_sum = 0.0;
    double last_lr = 0.0;
    for (int start = 0; start < n; start += cfg.B) {
      int stop = std::min(n, start + cfg.B);
      std::vector<TrainExample> batch;
      batch.reserve(stop - start);
      for (int i = start; i < stop; ++i) batch.push_back(labelled[order[i]]);

      Graph g(true);
      Var sup = sup_loss_graph(g, encoder, batch);
      Var total = sup;
      double unsup_value = 0.0, masked_fraction = 0.0;
      if (use_unsup) {
        auto draws = draw_unsup_batch(encoder, pool, cfg, rng_unsup);
        Var unsup = unsup_loss_from_draws(g, encoder, draws);
        unsup_value = g.value(unsup)(0, 0);
        int masked = 0;
        for (const auto& d : draws) masked += d.weight == 0.0 ? 1 : 0;
        masked_fraction =
            static_cast<double>(masked) / static_cast<double>(draws.size());
        total = g.add(sup, g.scale(unsup, cfg.gamma_m));
      }
      encoder.params().zero_grads();
      g.backward(total);
      double lr = schedule.at(global_step);
      optimizer.step(lr);
      ++global_step;

      sup_sum += g.value(sup)(0, 0);
      unsup_sum += unsup_value;
      mask_sum += masked_fraction;
      last_lr = lr;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.sup_loss = sup_sum / steps_per_epoch;
    m.unsup_loss = unsup_sum / steps_per_epoch;
    m.masked_fraction = mask_sum / steps_per_epoch;
    m.dev_f1 = evaluate(encoder, dev).micro_f1;
    m.lr = last_lr;
    result.history.push_back(m);

    if (result.history.size() == 1 || m.dev_f1 > result.best_f1) {
      result.best_f1 = m.dev_f1;
      result.best_epoch = epoch;
      best_values = snapshot_values(encoder.params());
    } else if (epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }

  restore_values(encoder.params(), best_values);

  if (!metrics_path.empty()) {
    std::ofstream out(metrics_path);
    if (!out) throw IoError("cannot write " + metrics_path);
    for (const auto& m : result.history) {
      json line{{"epoch", m.epoch},
                {"sup_loss", m.sup_loss},
                {"unsup_loss", m.unsup_loss},
                {"masked_fraction", m.masked_fraction},
                {"dev_f1", m.dev_f1},
                {"lr", m.lr}};
      out << line.dump() << "\n";
    }
  }
  return result;
}

}  // namespace ssre
