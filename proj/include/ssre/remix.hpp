#ifndef SSRE_REMIX_HPP
#define SSRE_REMIX_HPP

#include <utility>
#include <vector>

#include "ssre/corpus.hpp"
#include "ssre/encoder.hpp"
#include "ssre/rng.hpp"

namespace ssre {

// Latent interpolation settings. `layers` holds the 1-based candidate mix
// points: mixing at m means blocks 1..m run separately, the hidden states
// are interpolated, and blocks m+1..L run once on the blend.
struct MixSpec {
  double alpha = 60.0;
  double beta = 60.0;
  std::vector<int> layers{2, 3, 4};

  void validate(const EncoderConfig& config) const;  // throws ConfigError
};

// Canonical interpolation weight pair for lambda and 1-lambda.
//
// Both mix_weights(lambda) and mix_weights(1.0 - lambda) resolve to the
// same two doubles with their roles swapped, even when 1-lambda rounds.
// The larger weight is taken verbatim; the smaller is its complement,
// which is exact because the larger lies in [0.5, 1]. Swapping the
// operands of the blend therefore swaps the weights exactly, and since
// IEEE addition and multiplication are commutative at the bit level, the
// blended matrix is bitwise identical under the swap.
std::pair<double, double> mix_weights(double lambda);

double sample_lambda(const MixSpec& spec, Rng& rng);
int sample_layer(const MixSpec& spec, Rng& rng);

// Pooled representation of the virtual point between two token sequences:
// pad to a common length, run both through blocks [0, layer) under the
// union mask, blend with mix_weights(lambda), finish blocks [layer, L),
// and read the pooled row. lambda weights the first sequence.
Var remix_forward(Graph& g, Encoder& encoder, const std::vector<int>& ids_a,
                  const std::vector<int>& ids_b, double lambda, int layer);

// The matching label-space interpolation, using the same weight pair.
LabelDistribution mix_labels(const LabelDistribution& a,
                             const LabelDistribution& b, double lambda);

}  // namespace ssre

#endif  // SSRE_REMIX_HPP
