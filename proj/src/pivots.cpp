#include "ssre/pivots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ssre/errors.hpp"
#include "ssre/rng.hpp"

namespace ssre {

namespace {

constexpr const char* kEos = "</s>";

std::vector<std::string> with_eos(std::vector<std::string> tokens) {
  std::set<std::string> seen;
  for (const auto& t : tokens) {
    if (t.empty()) throw ConfigError("model vocabulary contains an empty token");
    if (!seen.insert(t).second) {
      throw ConfigError("model vocabulary contains a duplicate token: " + t);
    }
    if (t == kEos) throw ConfigError("model vocabulary already contains the eos symbol");
  }
  tokens.push_back(kEos);
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    out += t;
    out += '\x1f';
  }
  return out;
}

// Position-keyed coin flip in [0, 1), independent of the Rng streams.
double hash_unit(uint64_t seed, size_t position, const std::string& token) {
  uint64_t h = derive_seed(seed, std::to_string(position) + '\x1f' + token);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

PointerModel::PointerModel(std::vector<std::string> vocab, double peak,
                           TargetFn target_fn)
    : vocab_(with_eos(std::move(vocab))),
      peak_(peak),
      target_fn_(std::move(target_fn)) {
  if (vocab_.size() < 2) throw ConfigError("pointer model needs a non-eos token");
  if (!(peak_ > 0.0 && peak_ < 1.0)) {
    throw ConfigError("pointer model peak probability must lie in (0, 1)");
  }
  if (!target_fn_) throw ConfigError("pointer model needs a target function");
  for (size_t i = 0; i < vocab_.size(); ++i) {
    index_.emplace(vocab_[i], static_cast<int>(i));
  }
}

Eigen::VectorXd PointerModel::step(const std::vector<std::string>& source,
                                   const std::vector<std::string>& prefix) const {
  if (!cache_valid_ || source != cached_source_) {
    std::vector<std::string> target = target_fn_(source);
    cached_target_ids_.clear();
    cached_target_ids_.reserve(target.size());
    for (const auto& t : target) {
      auto it = index_.find(t);
      if (it == index_.end()) {
        throw DataError("pointer model target token outside vocabulary: " + t);
      }
      cached_target_ids_.push_back(it->second);
    }
    cached_source_ = source;
    cache_valid_ = true;
  }
  int preferred = prefix.size() < cached_target_ids_.size()
                      ? cached_target_ids_[prefix.size()]
                      : eos_id();
  const auto n = static_cast<Eigen::Index>(vocab_.size());
  Eigen::VectorXd logp(n);
  logp.setConstant(std::log((1.0 - peak_) / static_cast<double>(n - 1)));
  logp[preferred] = std::log(peak_);
  return logp;
}

HashModel::HashModel(std::vector<std::string> vocab, uint64_t seed)
    : vocab_(with_eos(std::move(vocab))), seed_(seed) {
  if (vocab_.size() < 2) throw ConfigError("hash model needs a non-eos token");
}

Eigen::VectorXd HashModel::step(const std::vector<std::string>& source,
                                const std::vector<std::string>& prefix) const {
  Rng rng(derive_seed(seed_, join_tokens(source) + '\x1e' + join_tokens(prefix)));
  const auto n = static_cast<Eigen::Index>(vocab_.size());
  Eigen::VectorXd logits(n);
  for (Eigen::Index i = 0; i < n; ++i) logits[i] = rng.normal();
  double m = logits.maxCoeff();
  double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

void save_substitution_table(const SubstitutionTable& table,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open substitution table for writing: " + path);
  for (const auto& [from, to] : table) out << from << ' ' << to << '\n';
  if (!out) throw DataError("failed writing substitution table: " + path);
}

SubstitutionTable load_substitution_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open substitution table: " + path);
  SubstitutionTable table;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string from, to, extra;
    if (!(fields >> from >> to) || (fields >> extra)) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected exactly two tokens per mapping");
    }
    if (!table.emplace(from, to).second) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": duplicate mapping for " + from);
    }
  }
  return table;
}

void save_synonym_table(const SynonymTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open synonym table for writing: " + path);
  for (const auto& [word, syns] : table) {
    out << word;
    for (const auto& s : syns) out << ' ' << s;
    out << '\n';
  }
  if (!out) throw DataError("failed writing synonym table: " + path);
}

SynonymTable load_synonym_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synonym table: " + path);
  SynonymTable table;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<std::string> syns;
    std::string s;
    while (fields >> s) syns.push_back(s);
    if (syns.empty()) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": a word needs at least one synonym");
    }
    if (!table.emplace(word, std::move(syns)).second) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": duplicate entry for " + word);
    }
  }
  return table;
}

SubstitutionTable make_rotation_cipher(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2) {
    throw ConfigError("rotation cipher needs at least two tokens");
  }
  SubstitutionTable table;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!table.emplace(tokens[i], tokens[(i + 1) % tokens.size()]).second) {
      throw ConfigError("rotation cipher inventory has a duplicate token: " +
                        tokens[i]);
    }
  }
  return table;
}

PivotPair make_identity_pivot(const std::vector<std::string>& tokens) {
  auto echo = [](const std::vector<std::string>& src) { return src; };
  PivotPair pair;
  pair.name = "identity";
  pair.forward = std::make_shared<PointerModel>(tokens, 0.9, echo);
  pair.backward = std::make_shared<PointerModel>(tokens, 0.9, echo);
  return pair;
}

PivotPair make_cipher_pivot(const std::vector<std::string>& tokens,
                            const SubstitutionTable& cipher,
                            const SynonymTable& synonyms, uint64_t seed,
                            double synonym_rate) {
  if (!(synonym_rate >= 0.0 && synonym_rate <= 1.0)) {
    throw ConfigError("synonym rate must lie in [0, 1]");
  }
  std::set<std::string> inventory(tokens.begin(), tokens.end());
  SubstitutionTable inverse;
  for (const auto& [from, to] : cipher) {
    if (inventory.count(to) == 0) {
      throw ConfigError("cipher image outside the token inventory: " + to);
    }
    if (!inverse.emplace(to, from).second) {
      throw ConfigError("cipher is not invertible, image repeats: " + to);
    }
  }
  for (const auto& [word, syns] : synonyms) {
    for (const auto& s : syns) {
      if (inventory.count(s) == 0) {
        throw ConfigError("synonym outside the token inventory: " + s);
      }
    }
  }

  auto encode = [cipher](const std::vector<std::string>& src) {
    std::vector<std::string> out;
    out.reserve(src.size());
    for (const auto& t : src) {
      auto it = cipher.find(t);
      out.push_back(it == cipher.end() ? t : it->second);
    }
    return out;
  };
  auto decode = [inverse, synonyms, seed,
                 synonym_rate](const std::vector<std::string>& src) {
    std::vector<std::string> out;
    out.reserve(src.size());
    for (size_t i = 0; i < src.size(); ++i) {
      auto it = inverse.find(src[i]);
      std::string base = it == inverse.end() ? src[i] : it->second;
      auto syn = synonyms.find(base);
      if (syn != synonyms.end() &&
          hash_unit(seed, i, base) < synonym_rate) {
        uint64_t pick = derive_seed(seed, base + '\x1f' + std::to_string(i));
        base = syn->second[pick % syn->second.size()];
      }
      out.push_back(std::move(base));
    }
    return out;
  };

  PivotPair pair;
  pair.name = "cipher";
  pair.forward = std::make_shared<PointerModel>(tokens, 0.9, encode);
  pair.backward = std::make_shared<PointerModel>(tokens, 0.9, decode);
  return pair;
}

PivotPair make_shuffle_pivot(const std::vector<std::string>& tokens,
                             uint64_t seed) {
  auto is_boundary = [](const std::string& t) {
    return t == "," || t == "." || t == ";" || t == "!" || t == "?";
  };
  auto scramble = [is_boundary](const std::vector<std::string>& src,
                                uint64_t stream) {
    Rng rng(stream);
    std::vector<std::string> out = src;
    size_t start = 0;
    for (size_t i = 0; i <= out.size(); ++i) {
      if (i == out.size() || is_boundary(out[i])) {
        if (i > start + 1) {
          std::vector<std::string> clause(out.begin() + start, out.begin() + i);
          rng.shuffle(clause);
          std::copy(clause.begin(), clause.end(), out.begin() + start);
        }
        start = i + 1;
      }
    }
    return out;
  };

  PivotPair pair;
  pair.name = "shuffle";
  pair.forward = std::make_shared<PointerModel>(
      tokens, 0.9, [scramble, seed](const std::vector<std::string>& src) {
        return scramble(src, derive_seed(seed, "shuffle_fwd\x1f" + join_tokens(src)));
      });
  pair.backward = std::make_shared<PointerModel>(
      tokens, 0.9, [scramble, seed](const std::vector<std::string>& src) {
        return scramble(src, derive_seed(seed, "shuffle_bwd\x1f" + join_tokens(src)));
      });
  return pair;
}

}  // namespace ssre
