#include "ssre/remix.hpp"

#include <algorithm>

#include "ssre/errors.hpp"

namespace ssre {

void MixSpec::validate(const EncoderConfig& config) const {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ConfigError("mix distribution shapes must be positive");
  }
  if (layers.empty()) throw ConfigError("no mix layers given");
  for (int m : layers) {
    if (m < 1 || m > config.layers) {
      throw ConfigError("mix layer " + std::to_string(m) +
                        " outside 1.." + std::to_string(config.layers));
    }
  }
}

std::pair<double, double> mix_weights(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("interpolation weight outside [0, 1]");
  }
  double other = 1.0 - lambda;
  double hi = std::max(lambda, other);
  double lo = 1.0 - hi;  // exact: hi is in [0.5, 1]
  return lambda >= other ? std::pair<double, double>{hi, lo}
                         : std::pair<double, double>{lo, hi};
}

double sample_lambda(const MixSpec& spec, Rng& rng) {
  return rng.beta(spec.alpha, spec.beta);
}

int sample_layer(const MixSpec& spec, Rng& rng) {
  return spec.layers[rng.uniform_index(spec.layers.size())];
}

Var remix_forward(Graph& g, Encoder& encoder, const std::vector<int>& ids_a,
                  const std::vector<int>& ids_b, double lambda, int layer) {
  const auto& config = encoder.config();
  if (layer < 1 || layer > config.layers) {
    throw ConfigError("mix layer outside the block range");
  }
  if (config.repr_mode != ReprMode::cls) {
    // A mixed virtual input has no marker positions to read out.
    throw ConfigError("latent mixing requires the cls readout");
  }
  PaddedPair pair = pad_to_union(ids_a, ids_b);
  Var ha = encoder.forward_range(g, encoder.embed(g, pair.ids_a), 0, layer,
                                 pair.valid_union);
  Var hb = encoder.forward_range(g, encoder.embed(g, pair.ids_b), 0, layer,
                                 pair.valid_union);
  auto [wa, wb] = mix_weights(lambda);
  Var mixed = g.lincomb(wa, ha, wb, hb);
  Var out = encoder.forward_range(g, mixed, layer, config.layers,
                                  pair.valid_union);
  return g.slice_rows(out, 0, 1);
}

LabelDistribution mix_labels(const LabelDistribution& a,
                             const LabelDistribution& b, double lambda) {
  if (a.probs.size() != b.probs.size()) {
    throw DataError("label distributions of different sizes");
  }
  auto [wa, wb] = mix_weights(lambda);
  LabelDistribution out;
  Eigen::VectorXd pa = wa * a.probs;
  Eigen::VectorXd pb = wb * b.probs;
  out.probs = pa + pb;
  return out;
}

}  // namespace ssre
