#ifndef SSRE_ENCODER_HPP
#define SSRE_ENCODER_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssre/autodiff.hpp"
#include "ssre/corpus.hpp"

namespace ssre {

// Fixed ids of the special tokens; corpus tokens follow in sorted order.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;

struct TokenVocab {
  std::vector<std::string> tokens;  // id -> surface form

  // Specials first, then the distinct corpus tokens sorted, then any type
  // words that marker rendering can introduce.
  static TokenVocab build(const std::vector<RelationStatement>& data);

  int size() const { return static_cast<int>(tokens.size()); }
  int id_of(const std::string& tok) const;  // kUnkId if unknown
  std::vector<int> encode(const std::vector<std::string>& toks) const;

  void save(const std::string& path) const;  // one token per line
  static TokenVocab load(const std::string& path);

 private:
  mutable std::unordered_map<std::string, int> index_;
  void reindex() const;
};

// How the per-token final hidden states collapse into one relation vector:
// the first-row classification token, or the two entity marker rows
// concatenated.
enum class ReprMode { cls, marker_concat };

ReprMode repr_mode_from_string(const std::string& name);
std::string to_string(ReprMode mode);

struct EncoderConfig {
  int layers = 4;
  int dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 256;
  int vocab_size = 0;
  int num_labels = 0;
  double ln_eps = 1e-5;
  ReprMode repr_mode = ReprMode::cls;

  int head_dim() const { return dim / heads; }
  int repr_dim() const {
    return repr_mode == ReprMode::marker_concat ? 2 * dim : dim;
  }
  void validate() const;  // throws ConfigError
};

// Post-norm transformer classifier over token ids. All state lives in the
// parameter store under stable names, so checkpoints and optimizer sweeps
// see the same ordering.
class Encoder {
 public:
  Encoder(const EncoderConfig& config, uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  ParamStore& params() { return params_; }

  // Token plus position embeddings, (T, dim).
  Var embed(Graph& g, const std::vector<int>& ids);

  // Applies blocks [first_block, last_block), 0-based half-open, to a
  // hidden state under a key validity mask. Composes exactly:
  // running [0,m) then [m,L) reproduces [0,L) bit for bit.
  Var forward_range(Graph& g, Var h, int first_block, int last_block,
                    const std::vector<unsigned char>& valid);

  // embed + all blocks.
  Var encode(Graph& g, const std::vector<int>& ids,
             const std::vector<unsigned char>& valid);

  // Two affine layers with a smooth nonlinearity between, over pooled
  // rows: (B, repr_dim) -> (B, num_labels) logits.
  Var classify(Graph& g, Var pooled);

  // Relation readout from a final hidden state: row 0 in cls mode, the two
  // marker rows concatenated in marker_concat mode. (1, repr_dim).
  Var pooled_repr(Graph& g, Var h_final, int head_pos, int tail_pos);

  // embed + all blocks + pooled_repr. Marker positions are ignored in cls
  // mode.
  Var encode_pooled(Graph& g, const std::vector<int>& ids,
                    const std::vector<unsigned char>& valid, int head_pos = 0,
                    int tail_pos = 0);

  // Inference-only p(F(x)): softmax over the classifier logits, computed
  // without recording. Gradients never flow through this path.
  LabelDistribution predict(const std::vector<int>& ids,
                            const std::vector<unsigned char>& valid,
                            int head_pos = 0, int tail_pos = 0);

 private:
  struct Block {
    Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Tensor *ln1_gain, *ln1_bias;
    Tensor *w1, *b1, *w2, *b2;
    Tensor *ln2_gain, *ln2_bias;
  };

  EncoderConfig config_;
  ParamStore params_;
  Tensor* tok_emb_;
  Tensor* pos_emb_;
  std::vector<Block> blocks_;
  Tensor* cls_w1_;
  Tensor* cls_b1_;
  Tensor* cls_w2_;
  Tensor* cls_b2_;
};

// Pads id sequences to a common length and exposes the validity mask.
struct PaddedPair {
  std::vector<int> ids_a;
  std::vector<int> ids_b;
  std::vector<unsigned char> valid_union;
};
PaddedPair pad_to_union(const std::vector<int>& a, const std::vector<int>& b);

std::vector<unsigned char> all_valid(size_t n);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay; decay is skipped for tensors flagged decay=false
// and is scaled by the step's learning rate.
class AdamW {
 public:
  AdamW(ParamStore& params, const AdamWConfig& config)
      : params_(&params), config_(config) {}

  void step(double lr);
  long long updates() const { return t_; }

 private:
  ParamStore* params_;
  AdamWConfig config_;
  long long t_ = 0;
};

// Linear warmup from zero to the peak over warmup_steps, then linear decay
// to zero at total_steps. at(0) == 0 whenever warmup is nonempty.
struct LrSchedule {
  double peak = 5e-5;
  long long total_steps = 0;
  double warmup_ratio = 0.1;

  long long warmup_steps() const;
  double at(long long step) const;
};

// Self-contained value checkpoint (config, vocab size, tensor directory,
// raw little-endian doubles). Optimizer state is not persisted.
void save_checkpoint(Encoder& encoder, const std::string& path);
Encoder load_checkpoint(const std::string& path);

}  // namespace ssre

#endif  // SSRE_ENCODER_HPP
