#include "ssre/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "ssre/errors.hpp"
#include "ssre/rng.hpp"

namespace ssre {

using nlohmann::json;

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{
      kPadToken, kUnkToken,  kClsToken,  kHeadOpen,   kHeadClose,
      kTailOpen, kTailClose, kSubjectMark, kObjectMark, kTypeSep};
  return specials;
}

}  // namespace

TokenVocab TokenVocab::build(const std::vector<RelationStatement>& data) {
  std::set<std::string> surface;
  for (const auto& s : data) {
    surface.insert(s.tokens.begin(), s.tokens.end());
    if (s.head_type) {
      for (const auto& w : type_label_words(*s.head_type)) surface.insert(w);
    }
    if (s.tail_type) {
      for (const auto& w : type_label_words(*s.tail_type)) surface.insert(w);
    }
  }
  TokenVocab v;
  v.tokens = special_tokens();
  for (const auto& t : special_tokens()) surface.erase(t);
  v.tokens.insert(v.tokens.end(), surface.begin(), surface.end());
  return v;
}

void TokenVocab::reindex() const {
  index_.clear();
  for (size_t i = 0; i < tokens.size(); ++i) {
    index_[tokens[i]] = static_cast<int>(i);
  }
}

int TokenVocab::id_of(const std::string& tok) const {
  if (index_.size() != tokens.size()) reindex();
  auto it = index_.find(tok);
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> TokenVocab::encode(
    const std::vector<std::string>& toks) const {
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (const auto& t : toks) ids.push_back(id_of(t));
  return ids;
}

void TokenVocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& t : tokens) out << t << "\n";
}

TokenVocab TokenVocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  TokenVocab v;
  std::string line;
  while (std::getline(in, line)) v.tokens.push_back(line);
  const auto& specials = special_tokens();
  if (v.tokens.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), v.tokens.begin())) {
    throw ParseError(path + ": vocabulary does not start with the special tokens");
  }
  return v;
}

ReprMode repr_mode_from_string(const std::string& name) {
  if (name == "cls") return ReprMode::cls;
  if (name == "marker_concat") return ReprMode::marker_concat;
  throw ConfigError("unknown repr_mode: " + name);
}

std::string to_string(ReprMode mode) {
  return mode == ReprMode::cls ? "cls" : "marker_concat";
}

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be positive");
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ConfigError("dim must be a positive multiple of heads");
  }
  if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be positive");
  if (vocab_size < static_cast<int>(special_tokens().size())) {
    throw ConfigError("vocab_size too small for the special tokens");
  }
  if (num_labels < 1) throw ConfigError("num_labels must be positive");
  if (ln_eps <= 0) throw ConfigError("ln_eps must be positive");
}

Encoder::Encoder(const EncoderConfig& config, uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(derive_seed(seed, "encoder_init"));
  auto weight = [&](const std::string& name, int r, int c) {
    Tensor* t = params_.create(name, r, c, true);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) t->value(i, j) = 0.02 * rng.normal();
    return t;
  };
  auto bias = [&](const std::string& name, int c) {
    return params_.create(name, 1, c, false);
  };
  auto gain = [&](const std::string& name, int c) {
    Tensor* t = params_.create(name, 1, c, false);
    t->value.setOnes();
    return t;
  };

  tok_emb_ = weight("tok_emb", config_.vocab_size, config_.dim);
  pos_emb_ = weight("pos_emb", config_.max_seq_len, config_.dim);
  for (int l = 0; l < config_.layers; ++l) {
    std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.wq = weight(p + "wq", config_.dim, config_.dim);
    b.bq = bias(p + "bq", config_.dim);
    b.wk = weight(p + "wk", config_.dim, config_.dim);
    b.bk = bias(p + "bk", config_.dim);
    b.wv = weight(p + "wv", config_.dim, config_.dim);
    b.bv = bias(p + "bv", config_.dim);
    b.wo = weight(p + "wo", config_.dim, config_.dim);
    b.bo = bias(p + "bo", config_.dim);
    b.ln1_gain = gain(p + "ln1.gain", config_.dim);
    b.ln1_bias = bias(p + "ln1.bias", config_.dim);
    b.w1 = weight(p + "ffn.w1", config_.dim, config_.ffn_dim);
    b.b1 = bias(p + "ffn.b1", config_.ffn_dim);
    b.w2 = weight(p + "ffn.w2", config_.ffn_dim, config_.dim);
    b.b2 = bias(p + "ffn.b2", config_.dim);
    b.ln2_gain = gain(p + "ln2.gain", config_.dim);
    b.ln2_bias = bias(p + "ln2.bias", config_.dim);
    blocks_.push_back(b);
  }
  cls_w1_ = weight("cls.w1", config_.repr_dim(), config_.dim);
  cls_b1_ = bias("cls.b1", config_.dim);
  cls_w2_ = weight("cls.w2", config_.dim, config_.num_labels);
  cls_b2_ = bias("cls.b2", config_.num_labels);
}

Var Encoder::embed(Graph& g, const std::vector<int>& ids) {
  int t = static_cast<int>(ids.size());
  if (t == 0) throw DataError("cannot embed an empty sequence");
  if (t > config_.max_seq_len) {
    throw DataError("sequence of length " + std::to_string(t) +
                    " exceeds max_seq_len " +
                    std::to_string(config_.max_seq_len));
  }
  std::vector<int> positions(t);
  std::iota(positions.begin(), positions.end(), 0);
  return g.add(g.embedding_rows(*tok_emb_, ids),
               g.embedding_rows(*pos_emb_, positions));
}

Var Encoder::forward_range(Graph& g, Var h, int first_block, int last_block,
                           const std::vector<unsigned char>& valid) {
  if (first_block < 0 || last_block > config_.layers ||
      first_block > last_block) {
    throw ConfigError("bad block range");
  }
  if (static_cast<long long>(valid.size()) != g.value(h).rows()) {
    throw DataError("mask length does not match sequence length");
  }
  int dh = config_.head_dim();
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = first_block; l < last_block; ++l) {
    const Block& b = blocks_[l];
    Var q = g.add_row_broadcast(g.matmul(h, g.param(*b.wq)), g.param(*b.bq));
    Var k = g.add_row_broadcast(g.matmul(h, g.param(*b.wk)), g.param(*b.bk));
    Var v = g.add_row_broadcast(g.matmul(h, g.param(*b.wv)), g.param(*b.bv));
    std::vector<Var> ctx_heads;
    for (int hd = 0; hd < config_.heads; ++hd) {
      Var qh = g.slice_cols(q, hd * dh, (hd + 1) * dh);
      Var kh = g.slice_cols(k, hd * dh, (hd + 1) * dh);
      Var vh = g.slice_cols(v, hd * dh, (hd + 1) * dh);
      Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dh);
      Var p = g.masked_softmax_rows(scores, valid);
      ctx_heads.push_back(g.matmul(p, vh));
    }
    Var ctx = g.concat_cols(ctx_heads);
    Var attn =
        g.add_row_broadcast(g.matmul(ctx, g.param(*b.wo)), g.param(*b.bo));
    Var h1 = g.layer_norm(g.add(h, attn), g.param(*b.ln1_gain),
                          g.param(*b.ln1_bias), config_.ln_eps);
    Var inner =
        g.gelu(g.add_row_broadcast(g.matmul(h1, g.param(*b.w1)), g.param(*b.b1)));
    Var ffn =
        g.add_row_broadcast(g.matmul(inner, g.param(*b.w2)), g.param(*b.b2));
    h = g.layer_norm(g.add(h1, ffn), g.param(*b.ln2_gain),
                     g.param(*b.ln2_bias), config_.ln_eps);
  }
  return h;
}

Var Encoder::encode(Graph& g, const std::vector<int>& ids,
                    const std::vector<unsigned char>& valid) {
  return forward_range(g, embed(g, ids), 0, config_.layers, valid);
}

Var Encoder::classify(Graph& g, Var pooled) {
  Var hidden = g.gelu(g.add_row_broadcast(g.matmul(pooled, g.param(*cls_w1_)),
                                          g.param(*cls_b1_)));
  return g.add_row_broadcast(g.matmul(hidden, g.param(*cls_w2_)),
                             g.param(*cls_b2_));
}

Var Encoder::pooled_repr(Graph& g, Var h_final, int head_pos, int tail_pos) {
  if (config_.repr_mode == ReprMode::cls) {
    return g.slice_rows(h_final, 0, 1);
  }
  long long rows = g.value(h_final).rows();
  if (head_pos < 0 || tail_pos < 0 || head_pos >= rows || tail_pos >= rows) {
    throw DataError("marker position outside the sequence");
  }
  std::vector<Var> parts{g.slice_rows(h_final, head_pos, head_pos + 1),
                         g.slice_rows(h_final, tail_pos, tail_pos + 1)};
  return g.concat_cols(parts);
}

Var Encoder::encode_pooled(Graph& g, const std::vector<int>& ids,
                           const std::vector<unsigned char>& valid,
                           int head_pos, int tail_pos) {
  return pooled_repr(g, encode(g, ids, valid), head_pos, tail_pos);
}

LabelDistribution Encoder::predict(const std::vector<int>& ids,
                                   const std::vector<unsigned char>& valid,
                                   int head_pos, int tail_pos) {
  Graph g(false);
  Var probs = g.softmax_rows(
      classify(g, encode_pooled(g, ids, valid, head_pos, tail_pos)));
  LabelDistribution d;
  d.probs = g.value(probs).row(0).transpose();
  return d;
}

PaddedPair pad_to_union(const std::vector<int>& a, const std::vector<int>& b) {
  PaddedPair p;
  size_t n = std::max(a.size(), b.size());
  p.ids_a = a;
  p.ids_b = b;
  p.ids_a.resize(n, kPadId);
  p.ids_b.resize(n, kPadId);
  p.valid_union.assign(n, 1);
  return p;
}

std::vector<unsigned char> all_valid(size_t n) {
  return std::vector<unsigned char>(n, 1);
}

void AdamW::step(double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& t : params_->all()) {
    t->adam_m = config_.beta1 * t->adam_m + (1.0 - config_.beta1) * t->grad;
    t->adam_v.array() = config_.beta2 * t->adam_v.array() +
                        (1.0 - config_.beta2) * t->grad.array().square();
    Eigen::ArrayXXd mhat = t->adam_m.array() / bc1;
    Eigen::ArrayXXd vhat = t->adam_v.array() / bc2;
    t->value.array() -= lr * mhat / (vhat.sqrt() + config_.eps);
    if (t->decay) {
      t->value.array() -= lr * config_.weight_decay * t->value.array();
    }
  }
}

long long LrSchedule::warmup_steps() const {
  return std::llround(warmup_ratio * static_cast<double>(total_steps));
}

double LrSchedule::at(long long step) const {
  if (total_steps <= 0) throw ConfigError("schedule needs a positive horizon");
  if (step < 0) step = 0;
  if (step >= total_steps) return 0.0;
  long long w = warmup_steps();
  if (w > 0 && step < w) {
    return peak * static_cast<double>(step) / static_cast<double>(w);
  }
  if (total_steps == w) return peak;
  return peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - w);
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'S', 'R', 'E',
                                      'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(Encoder& encoder, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const auto& c = encoder.config();
  json header;
  header["config"] = {{"layers", c.layers},
                      {"dim", c.dim},
                      {"heads", c.heads},
                      {"ffn_dim", c.ffn_dim},
                      {"max_seq_len", c.max_seq_len},
                      {"vocab_size", c.vocab_size},
                      {"num_labels", c.num_labels},
                      {"ln_eps", c.ln_eps},
                      {"repr_mode", to_string(c.repr_mode)}};
  json dir = json::array();
  for (const auto& t : encoder.params().all()) {
    dir.push_back({{"name", t->name},
                   {"rows", t->value.rows()},
                   {"cols", t->value.cols()}});
  }
  header["tensors"] = dir;
  std::string hs = header.dump();
  uint64_t hlen = hs.size();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& t : encoder.params().all()) {
    // Row-major little-endian doubles.
    for (long long r = 0; r < t->value.rows(); ++r) {
      for (long long cidx = 0; cidx < t->value.cols(); ++cidx) {
        double v = t->value(r, cidx);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  if (!out) throw IoError("short write to " + path);
}

Encoder load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ParseError(path + ": not a checkpoint file");
  }
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1ull << 30)) {
    throw ParseError(path + ": corrupt checkpoint header");
  }
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ParseError(path + ": truncated checkpoint header");
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  EncoderConfig c;
  const auto& jc = header.at("config");
  c.layers = jc.at("layers");
  c.dim = jc.at("dim");
  c.heads = jc.at("heads");
  c.ffn_dim = jc.at("ffn_dim");
  c.max_seq_len = jc.at("max_seq_len");
  c.vocab_size = jc.at("vocab_size");
  c.num_labels = jc.at("num_labels");
  c.ln_eps = jc.at("ln_eps");
  c.repr_mode = repr_mode_from_string(jc.at("repr_mode"));
  Encoder encoder(c, 0);
  const auto& dir = header.at("tensors");
  const auto& tensors = encoder.params().all();
  if (dir.size() != tensors.size()) {
    throw ParseError(path + ": tensor directory does not match the model");
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = dir[i];
    Tensor& t = *tensors[i];
    if (entry.at("name") != t.name ||
        entry.at("rows").get<long long>() != t.value.rows() ||
        entry.at("cols").get<long long>() != t.value.cols()) {
      throw ParseError(path + ": tensor mismatch at " + t.name);
    }
    for (long long r = 0; r < t.value.rows(); ++r) {
      for (long long cidx = 0; cidx < t.value.cols(); ++cidx) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw ParseError(path + ": truncated tensor data");
        t.value(r, cidx) = v;
      }
    }
  }
  return encoder;
}

}  // namespace ssre
