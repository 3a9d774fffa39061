#include "ssre/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ssre/errors.hpp"
#include "ssre/rng.hpp"

namespace ssre {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kNaLabelName = "no_relation";

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

// Reads typed values out of a ConfigMap and remembers which keys were
// touched, so unknown keys can be rejected wholesale afterwards.
class ConfigReader {
 public:
  explicit ConfigReader(const ConfigMap& map) : map_(&map) {}

  bool has(const std::string& key) const { return map_->count(key) > 0; }

  std::string str(const std::string& key, const std::string& def) {
    used_.insert(key);
    auto it = map_->find(key);
    return it == map_->end() ? def : it->second;
  }

  double number(const std::string& key, double def) {
    used_.insert(key);
    auto it = map_->find(key);
    return it == map_->end() ? def : parse_double(key, it->second);
  }

  int integer(const std::string& key, int def) {
    used_.insert(key);
    auto it = map_->find(key);
    return it == map_->end() ? def : parse_int(key, it->second);
  }

  uint64_t seed(const std::string& key, uint64_t def) {
    used_.insert(key);
    auto it = map_->find(key);
    if (it == map_->end()) return def;
    try {
      size_t pos = 0;
      uint64_t v = std::stoull(trim(it->second), &pos);
      if (pos != trim(it->second).size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a seed, got '" +
                        it->second + "'");
    }
  }

  bool boolean(const std::string& key, bool def) {
    used_.insert(key);
    auto it = map_->find(key);
    if (it == map_->end()) return def;
    std::string v = trim(it->second);
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" +
                      it->second + "'");
  }

  std::vector<std::string> strings(const std::string& key,
                                   std::vector<std::string> def) {
    used_.insert(key);
    auto it = map_->find(key);
    return it == map_->end() ? def : split_list(it->second);
  }

  std::vector<int> integers(const std::string& key, std::vector<int> def) {
    used_.insert(key);
    auto it = map_->find(key);
    if (it == map_->end()) return def;
    std::vector<int> out;
    for (const auto& item : split_list(it->second)) {
      out.push_back(parse_int(key, item));
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key) {
    used_.insert(key);
    std::vector<double> out;
    for (const auto& item : split_list(map_->at(key))) {
      out.push_back(parse_double(key, item));
    }
    return out;
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : *map_) {
      if (!used_.count(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) {
      throw ConfigError("unknown config key '" + unknown.front() + "'" +
                        (unknown.size() > 1
                             ? " (and " + std::to_string(unknown.size() - 1) +
                                   " more)"
                             : ""));
    }
  }

 private:
  double parse_double(const std::string& key, const std::string& text) const {
    try {
      size_t pos = 0;
      double v = std::stod(trim(text), &pos);
      if (pos != trim(text).size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" +
                        text + "'");
    }
  }

  int parse_int(const std::string& key, const std::string& text) const {
    try {
      size_t pos = 0;
      long long v = std::stoll(trim(text), &pos);
      if (pos != trim(text).size()) throw std::invalid_argument("");
      if (v < std::numeric_limits<int>::min() ||
          v > std::numeric_limits<int>::max()) {
        throw std::out_of_range("");
      }
      return static_cast<int>(v);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key +
                        "': expected an integer, got '" + text + "'");
    }
  }

  const ConfigMap* map_;
  std::set<std::string> used_;
};

std::string format_double(double v) { return json(v).dump(); }

void ensure_parent_dir(const std::string& path) {
  fs::path p = fs::path(path).parent_path();
  if (!p.empty()) fs::create_directories(p);
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) +
                       ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ParseError("config line " + std::to_string(line_no) +
                       ": empty key");
    }
    if (map.count(key)) {
      throw ParseError("config line " + std::to_string(line_no) +
                       ": duplicate key '" + key + "'");
    }
    map[key] = value;
  }
  return map;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(ConfigMap& map, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  map[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string dump_config(const ConfigMap& map) {
  std::string out;
  for (const auto& [key, value] : map) {
    out += key + " = " + value + "\n";
  }
  return out;
}

MarkerScheme marker_scheme_from_string(const std::string& name) {
  if (name == "entity") return MarkerScheme::entity_markers;
  if (name == "type") return MarkerScheme::type_markers;
  throw ConfigError("unknown marker scheme '" + name +
                    "' (expected entity or type)");
}

std::string to_string(MarkerScheme scheme) {
  return scheme == MarkerScheme::type_markers ? "type" : "entity";
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

constexpr int kSingleNames = 18;
constexpr int kPairedNameParts = 16;  // eight two-token names
constexpr int kNaConnectives = 4;

std::string padded(const char* prefix, int v, int width) {
  std::string digits = std::to_string(v);
  while (static_cast<int>(digits.size()) < width) digits.insert(0, "0");
  return prefix + digits;
}

struct TemplateShape {
  int lead = 0;
  int trail = 0;
  int clause = 0;  // 0: no trailing comma clause
  bool swap = false;
};

bool shares_token(const std::vector<std::string>& a,
                  const std::vector<std::string>& b) {
  for (const auto& x : a) {
    for (const auto& y : b) {
      if (x == y) return true;
    }
  }
  return false;
}

}  // namespace

void SyntheticCorpusSpec::validate() const {
  if (num_relations < 2) throw ConfigError("need at least two relations");
  if (templates_per_relation < 1) {
    throw ConfigError("need at least one template per relation");
  }
  if (vocab_size < 12) throw ConfigError("distractor vocab must be >= 12");
  if (num_examples < 1) throw ConfigError("need at least one example");
  if (!(na_fraction >= 0.0 && na_fraction < 1.0)) {
    throw ConfigError("na fraction must lie in [0, 1)");
  }
  if (connective_variants < 1) {
    throw ConfigError("need at least one connective variant");
  }
  if (confusable_pairs < 0 || 2 * confusable_pairs > num_relations) {
    throw ConfigError("confusable pairs exceed the relation count");
  }
  std::set<std::string> types(entity_types.begin(), entity_types.end());
  if (types.size() != entity_types.size()) {
    throw ConfigError("duplicate entity types");
  }
  if (entity_types.size() < 2) throw ConfigError("need at least two types");
  for (const auto& t : entity_types) {
    if (t.empty()) throw ConfigError("empty entity type name");
  }
  long long pairs = static_cast<long long>(entity_types.size()) *
                    static_cast<long long>(entity_types.size());
  if (num_relations > pairs) {
    throw ConfigError("not enough type pairs for distinct signatures");
  }
  long long na = std::llround(num_examples * na_fraction);
  if (num_examples - na < num_relations) {
    throw ConfigError("too few examples to cover every relation");
  }
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  int R = spec.num_relations;
  int V = spec.vocab_size;

  std::vector<std::string> distractors;
  for (int i = 0; i < V; ++i) distractors.push_back(padded("w", i, 3));

  // One shared name pool: the surface form never reveals the entity type.
  std::vector<std::vector<std::string>> names;
  for (int i = 0; i < kSingleNames; ++i) names.push_back({padded("n", i, 2)});
  for (int j = 0; j < kPairedNameParts / 2; ++j) {
    names.push_back({padded("p", 2 * j, 2), padded("p", 2 * j + 1, 2)});
  }

  // Confusable pairs share a connective group; everyone else owns one.
  int shared = spec.confusable_pairs;
  auto group_of = [&](int r) {
    return r < 2 * shared ? r / 2 : shared + (r - 2 * shared);
  };
  int V_conn = spec.connective_variants;
  std::vector<std::vector<std::string>> conn_sets(group_of(R - 1) + 1);
  for (size_t g = 0; g < conn_sets.size(); ++g) {
    for (int j = 0; j < V_conn; ++j) {
      conn_sets[g].push_back("conn" + std::to_string(g) + "v" +
                             std::to_string(j));
    }
  }
  std::vector<std::string> na_conns;
  for (int i = 0; i < kNaConnectives; ++i) {
    na_conns.push_back("naconn" + std::to_string(i));
  }

  // Distinct ordered type pairs; confusable relation pairs land on
  // different signatures automatically.
  std::vector<std::pair<std::string, std::string>> signatures;
  for (const auto& a : spec.entity_types) {
    for (const auto& b : spec.entity_types) signatures.push_back({a, b});
  }
  Rng sig_rng(derive_seed(spec.seed, "signatures"));
  sig_rng.shuffle(signatures);

  // Template shapes per connective group plus one extra set for negatives.
  // Confusable relations share shapes as well as connectives, so nothing
  // but the type signature separates them.
  int num_groups = group_of(R - 1) + 1;
  Rng tpl_rng(derive_seed(spec.seed, "templates"));
  const int clause_options[5] = {0, 0, 2, 3, 4};
  std::vector<std::vector<TemplateShape>> shapes(num_groups + 1);
  for (int g = 0; g <= num_groups; ++g) {
    for (int t = 0; t < spec.templates_per_relation; ++t) {
      TemplateShape sh;
      sh.lead = static_cast<int>(tpl_rng.uniform_index(4));
      sh.trail = static_cast<int>(tpl_rng.uniform_index(3));
      sh.clause = clause_options[tpl_rng.uniform_index(5)];
      sh.swap = tpl_rng.uniform_index(2) == 1;
      shapes[g].push_back(sh);
    }
  }

  long long na_count = std::llround(spec.num_examples * spec.na_fraction);
  long long rel_total = spec.num_examples - na_count;
  Rng rng(derive_seed(spec.seed, "examples"));

  std::vector<RelationStatement> all;
  all.reserve(spec.num_examples);
  auto emit = [&](int r) {  // r == -1 emits a negative example
    const auto& shape_set = shapes[r < 0 ? num_groups : group_of(r)];
    const TemplateShape& sh =
        shape_set[rng.uniform_index(shape_set.size())];
    const auto& head = names[rng.uniform_index(names.size())];
    const std::vector<std::string>* tail;
    do {
      tail = &names[rng.uniform_index(names.size())];
    } while (shares_token(head, *tail));

    std::string head_type, tail_type;
    if (r >= 0) {
      head_type = signatures[r].first;
      tail_type = signatures[r].second;
    } else {
      // NA borrows a relation's signature: types never separate NA.
      const auto& sig = signatures[rng.uniform_index(R)];
      head_type = sig.first;
      tail_type = sig.second;
    }
    std::string conn;
    if (r >= 0) {
      const auto& set = conn_sets[group_of(r)];
      conn = set[rng.uniform_index(set.size())];
    } else {
      conn = na_conns[rng.uniform_index(na_conns.size())];
    }

    RelationStatement s;
    auto push_fill = [&](int k) {
      for (int i = 0; i < k; ++i) {
        s.tokens.push_back(distractors[rng.uniform_index(V)]);
      }
    };
    auto push_name = [&](const std::vector<std::string>& name) {
      Span span{static_cast<int>(s.tokens.size()),
                static_cast<int>(s.tokens.size() + name.size())};
      s.tokens.insert(s.tokens.end(), name.begin(), name.end());
      return span;
    };

    push_fill(sh.lead);
    Span first = push_name(sh.swap ? *tail : head);
    s.tokens.push_back(conn);
    Span second = push_name(sh.swap ? head : *tail);
    push_fill(sh.trail);
    if (sh.clause > 0) {
      s.tokens.push_back(",");
      push_fill(sh.clause);
    }
    s.tokens.push_back(".");

    s.head = sh.swap ? second : first;
    s.tail = sh.swap ? first : second;
    s.head_type = head_type;
    s.tail_type = tail_type;
    s.label = r >= 0 ? "rel_" + std::to_string(r) : kNaLabelName;
    s.validate();
    all.push_back(std::move(s));
  };

  for (int r = 0; r < R; ++r) {
    long long count = rel_total / R + (r < rel_total % R ? 1 : 0);
    for (long long i = 0; i < count; ++i) emit(r);
  }
  for (long long i = 0; i < na_count; ++i) emit(-1);

  Rng order_rng(derive_seed(spec.seed, "order"));
  order_rng.shuffle(all);

  SyntheticCorpus corpus;
  corpus.statements = std::move(all);
  for (int i = 0; i < V; ++i) {
    corpus.synonyms[distractors[i]] = {distractors[(i + 5) % V],
                                       distractors[(i + 11) % V]};
  }
  // Within-set connective synonyms make lexical augmentation a paraphrase:
  // swapping variants is exactly the label-preserving rewrite.
  auto link_set = [&](const std::vector<std::string>& set) {
    int n = static_cast<int>(set.size());
    if (n < 2) return;
    for (int j = 0; j < n; ++j) {
      std::vector<std::string> options{set[(j + 1) % n]};
      if (n > 2) options.push_back(set[(j + 2) % n]);
      corpus.synonyms[set[j]] = std::move(options);
    }
  };
  for (const auto& set : conn_sets) link_set(set);
  link_set(na_conns);
  return corpus;
}

std::string synonyms_sidecar(const std::string& corpus_path) {
  const std::string suffix = ".jsonl";
  if (corpus_path.size() > suffix.size() &&
      corpus_path.compare(corpus_path.size() - suffix.size(), suffix.size(),
                          suffix) == 0) {
    return corpus_path.substr(0, corpus_path.size() - suffix.size()) +
           ".synonyms.tsv";
  }
  return corpus_path + ".synonyms.tsv";
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_map(const ConfigMap& map) {
  ConfigReader r(map);
  ExperimentConfig c;
  c.data_path = r.str("data.path", "");
  c.out_dir = r.str("data.out_dir", "run");

  c.synth.num_relations = r.integer("synth.num_relations", 8);
  c.synth.templates_per_relation = r.integer("synth.templates_per_relation", 3);
  c.synth.vocab_size = r.integer("synth.vocab_size", 60);
  c.synth.num_examples = r.integer("synth.num_examples", 2000);
  c.synth.na_fraction = r.number("synth.na_fraction", 0.25);
  c.synth.connective_variants = r.integer("synth.connective_variants", 6);
  c.synth.confusable_pairs = r.integer("synth.confusable_pairs", 0);
  c.synth.entity_types = r.strings(
      "synth.entity_types",
      {"PERSON", "ORGANIZATION", "LOCATION", "EVENT", "WORK"});
  c.synth.seed = r.seed("synth.seed", 1);

  c.split.labelled_fraction = r.number("split.labelled_fraction", 0.05);
  c.split.unlabelled_fraction = r.number("split.unlabelled_fraction", 0.5);
  c.split.seed = r.seed("split.seed", 1);

  c.pivots = r.strings("augment.pivots", {"cipher", "shuffle"});
  c.synonyms_path = r.str("augment.synonyms", "");
  c.aug_temperature = r.number("augment.temperature", 0.0);
  c.synonym_rate = r.number("augment.synonym_rate", 0.9);
  c.decode.beam = r.integer("augment.beam", 8);
  c.decode.extra_len = r.integer("augment.extra_len", 8);
  c.aug_seed = r.seed("augment.seed", 1);

  c.encoder.layers = r.integer("encoder.layers", 2);
  c.encoder.dim = r.integer("encoder.dim", 32);
  c.encoder.heads = r.integer("encoder.heads", 4);
  c.encoder.ffn_dim = r.integer("encoder.ffn_dim", 64);
  c.encoder.max_seq_len = r.integer("encoder.max_seq_len", 64);
  c.encoder.repr_mode =
      repr_mode_from_string(r.str("encoder.repr_mode", "cls"));
  c.markers = marker_scheme_from_string(r.str("encoder.markers", "type"));
  c.encoder_seed = r.seed("encoder.seed", 1);

  c.train.T = r.number("train.T", 0.5);
  c.train.gamma = r.number("train.gamma", 0.0);
  c.train.alpha = r.number("train.alpha", 60.0);
  c.train.beta = r.number("train.beta", 60.0);
  c.train.gamma_m = r.number("train.gamma_m", 0.5);
  c.train.K = r.integer("train.k", 0);
  c.train.B = r.integer("train.b", 8);
  c.train.lr = r.number("train.lr", 3e-3);
  c.train.warmup_ratio = r.number("train.warmup_ratio", 0.1);
  c.train.patience = r.integer("train.patience", 30);
  c.train.max_epochs = r.integer("train.max_epochs", 120);
  c.train.mixup = r.boolean("train.mixup", true);
  c.train.mix_layers = r.integers("train.mix_layers", {1, 2});
  c.train.seed = r.seed("train.seed", 1);

  c.eval_split = r.str("eval.split", "dev");

  for (const char* param : {"T", "gamma", "beta", "gamma_m"}) {
    std::string key = std::string("grid.") + param;
    if (r.has(key)) c.grid.push_back({param, r.numbers(key)});
  }

  r.finish();
  c.validate();
  return c;
}

ConfigMap ExperimentConfig::to_map() const {
  ConfigMap m;
  m["data.path"] = data_path;
  m["data.out_dir"] = out_dir;
  m["synth.num_relations"] = std::to_string(synth.num_relations);
  m["synth.templates_per_relation"] =
      std::to_string(synth.templates_per_relation);
  m["synth.vocab_size"] = std::to_string(synth.vocab_size);
  m["synth.num_examples"] = std::to_string(synth.num_examples);
  m["synth.na_fraction"] = format_double(synth.na_fraction);
  m["synth.connective_variants"] = std::to_string(synth.connective_variants);
  m["synth.confusable_pairs"] = std::to_string(synth.confusable_pairs);
  m["synth.entity_types"] = join_list(synth.entity_types);
  m["synth.seed"] = std::to_string(synth.seed);
  m["split.labelled_fraction"] = format_double(split.labelled_fraction);
  m["split.unlabelled_fraction"] = format_double(split.unlabelled_fraction);
  m["split.seed"] = std::to_string(split.seed);
  m["augment.pivots"] = join_list(pivots);
  m["augment.synonyms"] = synonyms_path;
  m["augment.temperature"] = format_double(aug_temperature);
  m["augment.synonym_rate"] = format_double(synonym_rate);
  m["augment.beam"] = std::to_string(decode.beam);
  m["augment.extra_len"] = std::to_string(decode.extra_len);
  m["augment.seed"] = std::to_string(aug_seed);
  m["encoder.layers"] = std::to_string(encoder.layers);
  m["encoder.dim"] = std::to_string(encoder.dim);
  m["encoder.heads"] = std::to_string(encoder.heads);
  m["encoder.ffn_dim"] = std::to_string(encoder.ffn_dim);
  m["encoder.max_seq_len"] = std::to_string(encoder.max_seq_len);
  m["encoder.repr_mode"] = to_string(encoder.repr_mode);
  m["encoder.markers"] = to_string(markers);
  m["encoder.seed"] = std::to_string(encoder_seed);
  m["train.T"] = format_double(train.T);
  m["train.gamma"] = format_double(train.gamma);
  m["train.alpha"] = format_double(train.alpha);
  m["train.beta"] = format_double(train.beta);
  m["train.gamma_m"] = format_double(train.gamma_m);
  m["train.k"] = std::to_string(train.K);
  m["train.b"] = std::to_string(train.B);
  m["train.lr"] = format_double(train.lr);
  m["train.warmup_ratio"] = format_double(train.warmup_ratio);
  m["train.patience"] = std::to_string(train.patience);
  m["train.max_epochs"] = std::to_string(train.max_epochs);
  m["train.mixup"] = train.mixup ? "true" : "false";
  {
    std::vector<std::string> layers;
    for (int l : train.mix_layers) layers.push_back(std::to_string(l));
    m["train.mix_layers"] = join_list(layers);
  }
  m["train.seed"] = std::to_string(train.seed);
  m["eval.split"] = eval_split;
  for (const auto& [param, values] : grid) {
    std::vector<std::string> items;
    for (double v : values) items.push_back(format_double(v));
    m["grid." + param] = join_list(items);
  }
  return m;
}

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("data.out_dir must not be empty");
  synth.validate();
  split.validate();
  for (const auto& p : pivots) {
    if (p != "identity" && p != "cipher" && p != "shuffle") {
      throw ConfigError("unknown pivot '" + p +
                        "' (expected identity, cipher, or shuffle)");
    }
  }
  if (!(aug_temperature >= 0.0)) {
    throw ConfigError("augment.temperature must be non-negative");
  }
  if (!(synonym_rate >= 0.0 && synonym_rate <= 1.0)) {
    throw ConfigError("augment.synonym_rate must lie in [0, 1]");
  }
  if (decode.beam < 1) throw ConfigError("augment.beam must be positive");
  if (decode.extra_len < 0) {
    throw ConfigError("augment.extra_len must be non-negative");
  }
  if (encoder.layers < 1 || encoder.dim < 1 || encoder.heads < 1 ||
      encoder.ffn_dim < 1 || encoder.max_seq_len < 8) {
    throw ConfigError("encoder dimensions out of range");
  }
  if (encoder.dim % encoder.heads != 0) {
    throw ConfigError("encoder.dim must be divisible by encoder.heads");
  }
  train.validate();
  if (train.mixup) {
    for (int l : train.mix_layers) {
      if (l < 1 || l > encoder.layers) {
        throw ConfigError("train.mix_layers entry " + std::to_string(l) +
                          " outside 1.." + std::to_string(encoder.layers));
      }
    }
  }
  if (eval_split != "labelled" && eval_split != "unlabelled" &&
      eval_split != "dev" && eval_split != "all") {
    throw ConfigError("eval.split must be labelled, unlabelled, dev, or all");
  }
  for (const auto& [param, values] : grid) {
    if (values.empty()) {
      throw ConfigError("grid." + param + " has no values");
    }
  }
}

std::string ExperimentConfig::corpus_path() const {
  if (!data_path.empty()) return data_path;
  return (fs::path(out_dir) / "corpus.jsonl").string();
}
std::string ExperimentConfig::manifest_path() const {
  return (fs::path(out_dir) / "split.jsonl").string();
}
std::string ExperimentConfig::cache_path() const {
  return (fs::path(out_dir) / "augcache.jsonl").string();
}
std::string ExperimentConfig::checkpoint_path() const {
  return (fs::path(out_dir) / "checkpoint.bin").string();
}
std::string ExperimentConfig::metrics_path() const {
  return (fs::path(out_dir) / "metrics.jsonl").string();
}
std::string ExperimentConfig::vocab_path() const {
  return (fs::path(out_dir) / "vocab.txt").string();
}
std::string ExperimentConfig::labels_path() const {
  return (fs::path(out_dir) / "labels.txt").string();
}
std::string ExperimentConfig::resolved_config_path() const {
  return (fs::path(out_dir) / "config.resolved").string();
}
std::string ExperimentConfig::trials_path() const {
  return (fs::path(out_dir) / "trials.jsonl").string();
}
std::string ExperimentConfig::eval_path() const {
  return (fs::path(out_dir) / "eval.json").string();
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

EncodedInput encode_formatted(const TokenVocab& vocab,
                              const FormattedInput& input) {
  EncodedInput x;
  x.ids = vocab.encode(input.tokens);
  x.head_pos = input.head_marker_pos;
  x.tail_pos = input.tail_marker_pos;
  return x;
}

namespace {

void save_labels(const LabelVocab& labels, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& name : labels.relations) out << name << "\n";
}

LabelVocab load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  LabelVocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) v.relations.push_back(line);
  }
  if (v.relations.empty()) throw DataError("empty label file " + path);
  return v;
}

LabelVocab labels_of(const std::vector<RelationStatement>& corpus) {
  std::vector<std::string> names;
  for (const auto& s : corpus) {
    if (!s.label.has_value()) {
      throw DataError("corpus record without a relation label");
    }
    names.push_back(*s.label);
  }
  return LabelVocab::from_labels(names, kNaLabelName);
}

FormattedInput format_statement(const RelationStatement& s,
                                MarkerScheme scheme) {
  return scheme == MarkerScheme::type_markers ? format_type_markers(s)
                                              : format_entity_markers(s);
}

}  // namespace

EncodedDataset assemble_dataset(const ExperimentConfig& cfg) {
  auto corpus = load_jsonl(cfg.corpus_path());
  if (corpus.empty()) throw DataError("empty corpus " + cfg.corpus_path());
  if (!fs::exists(cfg.manifest_path())) {
    throw ConfigError("split manifest missing at " + cfg.manifest_path() +
                      "; run the split command first");
  }
  auto split = load_split_manifest(cfg.manifest_path());

  EncodedDataset ds;
  ds.labels = labels_of(corpus);
  ds.vocab = TokenVocab::build(corpus);

  auto encode_x = [&](const RelationStatement& s) {
    FormattedInput fi = format_statement(s, cfg.markers);
    ds.max_formatted_len = std::max(ds.max_formatted_len, fi.length());
    return encode_formatted(ds.vocab, fi);
  };
  auto to_example = [&](int idx) {
    const auto& s = corpus.at(idx);
    TrainExample ex;
    ex.x = encode_x(s);
    ex.y = LabelDistribution::one_hot(ds.labels.index_of(*s.label),
                                      ds.labels.size());
    return ex;
  };

  for (int idx : split.labelled) ds.labelled.push_back(to_example(idx));
  for (int idx : split.remainder) ds.dev.push_back(to_example(idx));

  std::vector<EncodedInput> originals;
  for (int idx : split.unlabelled) originals.push_back(encode_x(corpus.at(idx)));

  std::vector<std::vector<EncodedInput>> augs;
  if (cfg.train.K > 0 && !originals.empty()) {
    if (!fs::exists(cfg.cache_path())) {
      throw ConfigError("augmentation cache missing at " + cfg.cache_path() +
                        " but train.k = " + std::to_string(cfg.train.K) +
                        "; run the augment command first");
    }
    auto cache = load_augmentation_cache(cfg.cache_path());
    if (cache.size() != split.unlabelled.size()) {
      throw DataError("augmentation cache holds " +
                      std::to_string(cache.size()) + " records for " +
                      std::to_string(split.unlabelled.size()) +
                      " unlabelled examples; re-run the augment command");
    }
    for (const auto& row : cache) {
      if (static_cast<int>(row.size()) < cfg.train.K) {
        throw DataError(
            "augmentation cache holds " + std::to_string(row.size()) +
            " variants per record but train.k = " +
            std::to_string(cfg.train.K) +
            "; re-run the augment command with enough pivots");
      }
      std::vector<EncodedInput> encoded;
      for (int k = 0; k < cfg.train.K; ++k) encoded.push_back(encode_x(row[k]));
      augs.push_back(std::move(encoded));
    }
  }
  ds.pool = UnlabelledPool::build(std::move(originals), std::move(augs));

  if (ds.max_formatted_len > cfg.encoder.max_seq_len) {
    throw ConfigError("formatted inputs reach " +
                      std::to_string(ds.max_formatted_len) +
                      " tokens; raise encoder.max_seq_len (currently " +
                      std::to_string(cfg.encoder.max_seq_len) + ")");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

SynthSummary cmd_synth(const ExperimentConfig& cfg) {
  cfg.validate();
  auto corpus = generate_synthetic_corpus(cfg.synth);
  ensure_dir(cfg.out_dir);
  ensure_parent_dir(cfg.corpus_path());
  save_jsonl(corpus.statements, cfg.corpus_path());
  std::string spath = cfg.synonyms_path.empty()
                          ? synonyms_sidecar(cfg.corpus_path())
                          : cfg.synonyms_path;
  ensure_parent_dir(spath);
  save_synonym_table(corpus.synonyms, spath);

  SynthSummary s;
  s.stats = dataset_stats(corpus.statements, labels_of(corpus.statements));
  s.corpus_path = cfg.corpus_path();
  s.synonyms_path = spath;
  return s;
}

SplitSummary cmd_split(const ExperimentConfig& cfg) {
  cfg.validate();
  auto corpus = load_jsonl(cfg.corpus_path());
  auto split = stratified_split(corpus, cfg.split);
  ensure_dir(cfg.out_dir);
  save_split_manifest(split, cfg.manifest_path());

  SplitSummary s;
  s.labelled = static_cast<int>(split.labelled.size());
  s.unlabelled = static_cast<int>(split.unlabelled.size());
  s.remainder = static_cast<int>(split.remainder.size());
  s.manifest_path = cfg.manifest_path();
  return s;
}

std::vector<PivotPair> build_pivots(const ExperimentConfig& cfg,
                                    const std::vector<std::string>& inventory,
                                    const SynonymTable& synonyms) {
  std::vector<PivotPair> pivots;
  for (size_t i = 0; i < cfg.pivots.size(); ++i) {
    const std::string& name = cfg.pivots[i];
    uint64_t seed = derive_seed(cfg.aug_seed,
                                name + "@" + std::to_string(i));
    if (name == "identity") {
      pivots.push_back(make_identity_pivot(inventory));
    } else if (name == "cipher") {
      pivots.push_back(make_cipher_pivot(inventory,
                                         make_rotation_cipher(inventory),
                                         synonyms, seed, cfg.synonym_rate));
    } else if (name == "shuffle") {
      pivots.push_back(make_shuffle_pivot(inventory, seed));
    } else {
      throw ConfigError("unknown pivot '" + name + "'");
    }
  }
  return pivots;
}

AugmentSummary run_augmentation(const std::vector<RelationStatement>& corpus,
                                const std::vector<int>& unlabelled,
                                const std::vector<PivotPair>& pivots,
                                const ExperimentConfig& cfg) {
  if (pivots.empty()) throw ConfigError("no augmentation pivots configured");
  AugmentSummary summary;
  std::vector<std::vector<RelationStatement>> cache;
  cache.reserve(unlabelled.size());
  // Records are independent: each (record, pivot) cell draws from its own
  // derived stream, so the loop order never affects the cache.
  for (size_t u = 0; u < unlabelled.size(); ++u) {
    const auto& stmt = corpus.at(unlabelled[u]);
    std::vector<RelationStatement> row;
    for (size_t p = 0; p < pivots.size(); ++p) {
      Rng rng(derive_seed(cfg.aug_seed, "record" + std::to_string(u) + ":" +
                                            std::to_string(p)));
      ++summary.attempts;
      try {
        row.push_back(
            back_translate(stmt, pivots[p], cfg.aug_temperature, rng,
                           cfg.decode));
        ++summary.satisfied;
      } catch (const UnsatisfiableError&) {
        row.push_back(stmt);
        ++summary.fallbacks;
      } catch (const std::exception& e) {
        std::cerr << "augment: record " << unlabelled[u] << " pivot "
                  << pivots[p].name << ": " << e.what() << "\n";
        row.push_back(stmt);
        ++summary.failures;
      }
    }
    cache.push_back(std::move(row));
  }
  ensure_dir(cfg.out_dir);
  save_augmentation_cache(cache, cfg.cache_path());
  summary.records = static_cast<int>(unlabelled.size());
  summary.cache_path = cfg.cache_path();
  return summary;
}

AugmentSummary cmd_augment(const ExperimentConfig& cfg) {
  cfg.validate();
  auto corpus = load_jsonl(cfg.corpus_path());
  if (!fs::exists(cfg.manifest_path())) {
    throw ConfigError("split manifest missing at " + cfg.manifest_path() +
                      "; run the split command first");
  }
  auto split = load_split_manifest(cfg.manifest_path());

  // The pivot language inventory: every corpus token plus the synonym
  // table's words, so synonym images are always in-language.
  std::set<std::string> tokens;
  for (const auto& s : corpus) tokens.insert(s.tokens.begin(), s.tokens.end());
  std::string spath = cfg.synonyms_path.empty()
                          ? synonyms_sidecar(cfg.corpus_path())
                          : cfg.synonyms_path;
  SynonymTable synonyms;
  if (fs::exists(spath)) synonyms = load_synonym_table(spath);
  for (const auto& [word, options] : synonyms) {
    tokens.insert(word);
    tokens.insert(options.begin(), options.end());
  }
  std::vector<std::string> inventory(tokens.begin(), tokens.end());

  auto pivots = build_pivots(cfg, inventory, synonyms);
  return run_augmentation(corpus, split.unlabelled, pivots, cfg);
}

TrainSummary cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!fs::exists(cfg.corpus_path())) {
    throw ConfigError("corpus missing at " + cfg.corpus_path() +
                      "; run the synth command or set data.path");
  }
  ensure_dir(cfg.out_dir);
  if (!fs::exists(cfg.manifest_path())) cmd_split(cfg);
  auto ds = assemble_dataset(cfg);

  EncoderConfig ec = cfg.encoder;
  ec.vocab_size = ds.vocab.size();
  ec.num_labels = ds.labels.size();
  Encoder encoder(ec, cfg.encoder_seed);

  TrainSummary s;
  s.fit = fit(encoder, ds.labelled, ds.pool, ds.dev, cfg.train, {},
              cfg.metrics_path());
  save_checkpoint(encoder, cfg.checkpoint_path());
  ds.vocab.save(cfg.vocab_path());
  save_labels(ds.labels, cfg.labels_path());
  {
    std::ofstream out(cfg.resolved_config_path());
    if (!out) throw IoError("cannot write " + cfg.resolved_config_path());
    out << dump_config(cfg.to_map());
  }
  s.checkpoint_path = cfg.checkpoint_path();
  s.metrics_path = cfg.metrics_path();
  s.config_path = cfg.resolved_config_path();
  return s;
}

EvalSummary cmd_eval(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!fs::exists(cfg.checkpoint_path())) {
    throw ConfigError("checkpoint missing at " + cfg.checkpoint_path() +
                      "; run the train command first");
  }
  Encoder encoder = load_checkpoint(cfg.checkpoint_path());
  TokenVocab vocab = TokenVocab::load(cfg.vocab_path());
  LabelVocab labels = load_labels(cfg.labels_path());
  auto corpus = load_jsonl(cfg.corpus_path());

  std::vector<int> indices;
  if (cfg.eval_split == "all") {
    indices.resize(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) indices[i] = static_cast<int>(i);
  } else {
    if (!fs::exists(cfg.manifest_path())) {
      throw ConfigError("split manifest missing at " + cfg.manifest_path() +
                        "; run the split command first");
    }
    auto split = load_split_manifest(cfg.manifest_path());
    if (cfg.eval_split == "labelled") indices = split.labelled;
    if (cfg.eval_split == "unlabelled") indices = split.unlabelled;
    if (cfg.eval_split == "dev") indices = split.remainder;
  }

  std::vector<TrainExample> data;
  for (int idx : indices) {
    const auto& stmt = corpus.at(idx);
    TrainExample ex;
    ex.x = encode_formatted(vocab, format_statement(stmt, cfg.markers));
    ex.y = LabelDistribution::one_hot(labels.index_of(*stmt.label),
                                      labels.size());
    data.push_back(std::move(ex));
  }

  EvalSummary s;
  s.result = evaluate(encoder, data);
  s.examples = static_cast<int>(data.size());

  json out{{"split", cfg.eval_split},
           {"examples", s.examples},
           {"micro_f1", s.result.micro_f1},
           {"micro_precision", s.result.micro_precision},
           {"micro_recall", s.result.micro_recall}};
  json per_class = json::array();
  for (size_t c = 1; c < s.result.per_class.size(); ++c) {
    const auto& m = s.result.per_class[c];
    per_class.push_back({{"relation", labels.relations[c]},
                         {"tp", m.tp},
                         {"fp", m.fp},
                         {"fn", m.fn},
                         {"precision", m.precision},
                         {"recall", m.recall}});
  }
  out["per_class"] = per_class;
  ensure_dir(cfg.out_dir);
  std::ofstream f(cfg.eval_path());
  if (!f) throw IoError("cannot write " + cfg.eval_path());
  f << out.dump(2) << "\n";
  s.eval_path = cfg.eval_path();
  return s;
}

TrainConfig with_grid_value(TrainConfig base, const std::string& param,
                            double value) {
  if (param == "T") {
    base.T = value;
  } else if (param == "gamma") {
    base.gamma = value;
  } else if (param == "beta") {
    base.beta = value;
  } else if (param == "gamma_m") {
    base.gamma_m = value;
  } else {
    throw ConfigError("unknown grid parameter '" + param + "'");
  }
  return base;
}

GridSummary cmd_gridsearch(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.grid.empty()) throw ConfigError("no grid axes configured");
  ensure_dir(cfg.out_dir);
  if (!fs::exists(cfg.manifest_path())) cmd_split(cfg);
  auto ds = assemble_dataset(cfg);

  EncoderConfig ec = cfg.encoder;
  ec.vocab_size = ds.vocab.size();
  ec.num_labels = ds.labels.size();

  GridSummary summary;
  TrainConfig current = cfg.train;
  double final_f1 = 0.0;
  // Coordinate-wise search: each axis is swept with every earlier axis
  // already fixed at its winner, never the full cross product.
  for (const auto& [param, values] : cfg.grid) {
    double best_value = values.front();
    double best_f1 = -1.0;
    for (double v : values) {
      TrainConfig trial_cfg = with_grid_value(current, param, v);
      Encoder encoder(ec, cfg.encoder_seed);
      auto res = fit(encoder, ds.labelled, ds.pool, ds.dev, trial_cfg);
      summary.trials.push_back({param, v, res.best_f1, res.best_epoch});
      if (res.best_f1 > best_f1) {
        best_f1 = res.best_f1;
        best_value = v;
      }
    }
    current = with_grid_value(current, param, best_value);
    final_f1 = best_f1;
  }
  summary.best = current;
  summary.best_f1 = final_f1;

  std::ofstream out(cfg.trials_path());
  if (!out) throw IoError("cannot write " + cfg.trials_path());
  for (const auto& t : summary.trials) {
    json line{{"param", t.param},
              {"value", t.value},
              {"dev_f1", t.dev_f1},
              {"best_epoch", t.best_epoch}};
    out << line.dump() << "\n";
  }
  json best{{"best",
             {{"T", current.T},
              {"gamma", current.gamma},
              {"beta", current.beta},
              {"gamma_m", current.gamma_m}}},
            {"dev_f1", final_f1}};
  out << best.dump() << "\n";
  summary.trials_path = cfg.trials_path();
  return summary;
}

}  // namespace ssre
