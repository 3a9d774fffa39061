#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssre/cli.hpp"
#include "ssre/errors.hpp"
#include "ssre/pivots.hpp"

using namespace ssre;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("ssre_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int line_count(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  int n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

// A corpus and model small enough that a full training run stays well
// under a second.
ConfigMap tiny_map(const std::string& dir) {
  ConfigMap m;
  m["data.out_dir"] = dir;
  m["synth.num_relations"] = "3";
  m["synth.templates_per_relation"] = "2";
  m["synth.connective_variants"] = "2";
  m["synth.vocab_size"] = "12";
  m["synth.num_examples"] = "180";
  m["synth.na_fraction"] = "0.2";
  m["split.labelled_fraction"] = "0.3";
  m["split.unlabelled_fraction"] = "0.3";
  m["encoder.dim"] = "16";
  m["encoder.heads"] = "2";
  m["encoder.ffn_dim"] = "32";
  m["encoder.max_seq_len"] = "48";
  m["train.max_epochs"] = "6";
  m["train.patience"] = "6";
  m["train.b"] = "8";
  return m;
}

ExperimentConfig tiny_config(const std::string& dir) {
  return ExperimentConfig::from_map(tiny_map(dir));
}

bool statements_equal(const RelationStatement& a, const RelationStatement& b) {
  return a.tokens == b.tokens && a.head.start == b.head.start &&
         a.head.end == b.head.end && a.tail.start == b.tail.start &&
         a.tail.end == b.tail.end && a.head_type == b.head_type &&
         a.tail_type == b.tail_type && a.label == b.label;
}

// Mirrors the adversarial model from the augmentation suite: the backward
// leg can only emit "filler", so entity constraints are unsatisfiable.
PivotPair make_dead_end_pivot(const std::vector<std::string>& tokens) {
  PivotPair pair;
  pair.name = "dead_end";
  pair.forward = std::make_shared<PointerModel>(
      tokens, 0.9, [](const std::vector<std::string>& src) { return src; });
  std::vector<std::string> filler_only{"filler"};
  pair.backward = std::make_shared<PointerModel>(
      filler_only, 0.9, [](const std::vector<std::string>& src) {
        return std::vector<std::string>(src.size(), "filler");
      });
  return pair;
}

}  // namespace

TEST_CASE("config text parses comments, blanks, and spacing") {
  ConfigMap m = parse_config_text(
      "# leading comment\n"
      "\n"
      "train.T = 0.5   # trailing comment\n"
      "  augment.pivots =cipher, shuffle  \n"
      "data.out_dir=runs/a\n"
      "augment.synonyms =\n");
  CHECK(m.size() == 4);
  CHECK(m.at("train.T") == "0.5");
  CHECK(m.at("augment.pivots") == "cipher, shuffle");
  CHECK(m.at("data.out_dir") == "runs/a");
  CHECK(m.at("augment.synonyms").empty());

  apply_override(m, "train.T=1.0");
  CHECK(m.at("train.T") == "1.0");
  CHECK_THROWS_AS(apply_override(m, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(m, "=value"), ConfigError);

  ConfigMap again = parse_config_text(dump_config(m));
  CHECK(again == m);
}

TEST_CASE("config parse errors carry line numbers") {
  try {
    parse_config_text("a = 1\nb = 2\nbroken line\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  try {
    parse_config_text("a = 1\na = 2\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    std::string what = e.what();
    CHECK(what.find("line 2") != std::string::npos);
    CHECK(what.find("duplicate") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("= orphan value\n"), ParseError);
  CHECK_THROWS_AS(parse_config_file("/nonexistent/path.cfg"), IoError);
}

TEST_CASE("experiment config round-trips through its map form") {
  ExperimentConfig def = ExperimentConfig::from_map({});
  CHECK(ExperimentConfig::from_map(def.to_map()).to_map() == def.to_map());

  ConfigMap m = tiny_map(scratch_dir("roundtrip"));
  m["train.T"] = "0.4";
  m["train.mixup"] = "false";
  m["train.mix_layers"] = "1";
  m["encoder.repr_mode"] = "marker_concat";
  m["encoder.markers"] = "entity";
  m["augment.pivots"] = "identity,cipher";
  m["grid.T"] = "0.4,0.6,0.8,1.0";
  m["grid.gamma_m"] = "0,0.5,1";
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  CHECK(cfg.train.T == 0.4);
  CHECK_FALSE(cfg.train.mixup);
  CHECK(cfg.encoder.repr_mode == ReprMode::marker_concat);
  CHECK(cfg.markers == MarkerScheme::entity_markers);
  REQUIRE(cfg.grid.size() == 2);
  CHECK(cfg.grid[0].first == "T");
  CHECK(cfg.grid[0].second == std::vector<double>{0.4, 0.6, 0.8, 1.0});
  CHECK(cfg.grid[1].first == "gamma_m");
  CHECK(ExperimentConfig::from_map(cfg.to_map()).to_map() == cfg.to_map());
}

TEST_CASE("config rejects unknown keys and malformed values") {
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"train.tea", "1"}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"grid.alpha", "1,2"}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"train.lr", "fast"}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"train.b", "8.5"}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"train.mixup", "yes"}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"encoder.markers", "bold"}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"encoder.repr_mode", "avg"}}),
                  ConfigError);
  try {
    ExperimentConfig::from_map({{"grid.alpha", "1,2"}});
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("grid.alpha") != std::string::npos);
  }
}

TEST_CASE("config validation bounds") {
  auto with = [](const std::string& key, const std::string& value) {
    ConfigMap m{{key, value}};
    return ExperimentConfig::from_map(m);
  };
  CHECK_THROWS_AS(with("augment.pivots", "cipher,teleport"), ConfigError);
  CHECK_THROWS_AS(with("eval.split", "test"), ConfigError);
  CHECK_THROWS_AS(with("train.mix_layers", "1,5"), ConfigError);
  CHECK_THROWS_AS(with("encoder.dim", "30"), ConfigError);  // not / heads
  CHECK_THROWS_AS(with("augment.synonym_rate", "1.5"), ConfigError);
  CHECK_THROWS_AS(with("augment.beam", "0"), ConfigError);
  CHECK_THROWS_AS(with("grid.T", ""), ConfigError);
  CHECK_THROWS_AS(with("data.out_dir", ""), ConfigError);
  // mix_layers outside the encoder is fine when mixup is off.
  ConfigMap ok{{"train.mixup", "false"}, {"train.mix_layers", "7"}};
  CHECK_NOTHROW(ExperimentConfig::from_map(ok));
}

TEST_CASE("marker scheme names round-trip") {
  CHECK(marker_scheme_from_string("type") == MarkerScheme::type_markers);
  CHECK(marker_scheme_from_string("entity") == MarkerScheme::entity_markers);
  CHECK(to_string(MarkerScheme::type_markers) == "type");
  CHECK(to_string(MarkerScheme::entity_markers) == "entity");
  CHECK_THROWS_AS(marker_scheme_from_string("span"), ConfigError);
}

TEST_CASE("synthetic corpus hits its advertised counts") {
  SyntheticCorpusSpec spec;  // 8 relations, 2000 examples, NA 0.25
  auto corpus = generate_synthetic_corpus(spec);
  REQUIRE(corpus.statements.size() == 2000);

  std::map<std::string, int> counts;
  for (const auto& s : corpus.statements) {
    s.validate();
    REQUIRE(s.typed());
    counts[*s.label] += 1;
  }
  CHECK(counts.at("no_relation") == 500);
  int relational = 0;
  for (int r = 0; r < 8; ++r) {
    int c = counts.at("rel_" + std::to_string(r));
    relational += c;
    CHECK(c >= 187);  // 1500 spread round-robin over 8
    CHECK(c <= 188);
  }
  CHECK(relational == 1500);

  auto stats = dataset_stats(
      corpus.statements,
      LabelVocab::from_labels({"rel_0", "no_relation"}, "no_relation"));
  CHECK(stats.num_examples == 2000);
  CHECK(stats.na_fraction == doctest::Approx(0.25));
}

TEST_CASE("synthetic corpus is a deterministic function of its seed") {
  SyntheticCorpusSpec spec;
  spec.num_examples = 300;
  auto a = generate_synthetic_corpus(spec);
  auto b = generate_synthetic_corpus(spec);
  REQUIRE(a.statements.size() == b.statements.size());
  for (size_t i = 0; i < a.statements.size(); ++i) {
    CHECK(statements_equal(a.statements[i], b.statements[i]));
  }
  CHECK(a.synonyms == b.synonyms);

  spec.seed = 2;
  auto c = generate_synthetic_corpus(spec);
  bool any_differ = false;
  for (size_t i = 0; i < a.statements.size(); ++i) {
    if (!statements_equal(a.statements[i], c.statements[i])) {
      any_differ = true;
      break;
    }
  }
  CHECK(any_differ);
}

TEST_CASE("relation is a deterministic function of the connective") {
  SyntheticCorpusSpec spec;
  spec.num_examples = 800;
  auto corpus = generate_synthetic_corpus(spec);

  auto is_connective = [](const std::string& t) {
    return t.rfind("conn", 0) == 0 || t.rfind("naconn", 0) == 0;
  };
  std::map<std::string, std::set<std::string>> label_of_conn;
  std::set<std::pair<std::string, std::string>> relation_sigs;
  for (const auto& s : corpus.statements) {
    std::vector<std::string> conns;
    for (const auto& t : s.tokens) {
      if (is_connective(t)) conns.push_back(t);
    }
    REQUIRE(conns.size() == 1);  // exactly one connective per sentence
    label_of_conn[conns[0]].insert(*s.label);
    if (*s.label == "no_relation") {
      CHECK(conns[0].rfind("naconn", 0) == 0);
    } else {
      CHECK(conns[0].rfind("naconn", 0) != 0);
      relation_sigs.insert({*s.head_type, *s.tail_type});
    }
    // Head and tail never share a token, so span relocation is unambiguous.
    for (const auto& h : s.head_phrase()) {
      for (const auto& t : s.tail_phrase()) CHECK(h != t);
    }
  }
  for (const auto& [conn, labels] : label_of_conn) {
    CHECK(labels.size() == 1);
  }
  CHECK(relation_sigs.size() == 8);  // distinct ordered type signatures

  // NA examples reuse relation signatures, so types never identify NA.
  for (const auto& s : corpus.statements) {
    if (*s.label == "no_relation") {
      CHECK(relation_sigs.count({*s.head_type, *s.tail_type}) == 1);
    }
  }
}

TEST_CASE("confusable relations share connectives but not signatures") {
  SyntheticCorpusSpec spec;
  spec.num_relations = 4;
  spec.confusable_pairs = 1;
  spec.connective_variants = 3;
  spec.num_examples = 400;
  spec.na_fraction = 0.1;
  auto corpus = generate_synthetic_corpus(spec);

  std::map<std::string, std::set<std::string>> conns_of_label;
  std::map<std::string, std::pair<std::string, std::string>> sig_of_label;
  for (const auto& s : corpus.statements) {
    if (*s.label == "no_relation") continue;
    for (const auto& t : s.tokens) {
      if (t.rfind("conn", 0) == 0) conns_of_label[*s.label].insert(t);
    }
    sig_of_label[*s.label] = {*s.head_type, *s.tail_type};
  }
  CHECK(conns_of_label.at("rel_0") == conns_of_label.at("rel_1"));
  CHECK(sig_of_label.at("rel_0") != sig_of_label.at("rel_1"));
  // Non-confusable relations keep disjoint connective sets.
  for (const auto& c : conns_of_label.at("rel_2")) {
    CHECK(conns_of_label.at("rel_3").count(c) == 0);
    CHECK(conns_of_label.at("rel_0").count(c) == 0);
  }
}

TEST_CASE("synonym table is label-preserving by construction") {
  SyntheticCorpusSpec spec;
  spec.num_examples = 200;
  auto corpus = generate_synthetic_corpus(spec);
  REQUIRE_FALSE(corpus.synonyms.empty());

  auto set_prefix = [](const std::string& t) {
    // conn3v1 -> conn3v, naconn2 -> naconn, w017 -> w
    size_t i = t.size();
    while (i > 0 && std::isdigit(static_cast<unsigned char>(t[i - 1]))) --i;
    return t.substr(0, i);
  };
  for (const auto& [word, options] : corpus.synonyms) {
    REQUIRE_FALSE(options.empty());
    for (const auto& o : options) {
      CHECK(o != word);
      CHECK(set_prefix(o) == set_prefix(word));
    }
  }
  // Connective variants of one relation are linked to each other.
  CHECK(corpus.synonyms.count("conn0v0") == 1);
  CHECK(corpus.synonyms.count("naconn0") == 1);
}

TEST_CASE("synthetic spec validation") {
  auto broken = [](auto&& mutate) {
    SyntheticCorpusSpec s;
    mutate(s);
    return s;
  };
  CHECK_THROWS_AS(
      broken([](auto& s) { s.num_relations = 1; }).validate(), ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.vocab_size = 8; }).validate(), ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.na_fraction = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.templates_per_relation = 0; }).validate(),
      ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.connective_variants = 0; }).validate(),
      ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.confusable_pairs = 5; }).validate(), ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.entity_types = {"A"}; }).validate(), ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.entity_types = {"A", "A", "B"}; }).validate(),
      ConfigError);
  CHECK_THROWS_AS(
      broken([](auto& s) { s.num_relations = 26; }).validate(),
      ConfigError);  // only 25 ordered pairs over 5 types
  CHECK_THROWS_AS(
      broken([](auto& s) { s.num_examples = 9; }).validate(),
      ConfigError);  // cannot cover 8 relations after the NA share
  CHECK_NOTHROW(SyntheticCorpusSpec{}.validate());
}

TEST_CASE("sidecar naming") {
  CHECK(synonyms_sidecar("runs/a/corpus.jsonl") ==
        "runs/a/corpus.synonyms.tsv");
  CHECK(synonyms_sidecar("data.bin") == "data.bin.synonyms.tsv");
}

TEST_CASE("cmd_synth writes corpus, sidecar, and exact stats") {
  std::string dir = scratch_dir("synth");
  ConfigMap m{{"data.out_dir", dir}};
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  auto s = cmd_synth(cfg);
  CHECK(s.stats.num_examples == 2000);
  CHECK(s.stats.num_relations == 9);  // 8 relations plus NA
  CHECK(s.stats.na_fraction == doctest::Approx(0.25));
  CHECK(load_jsonl(s.corpus_path).size() == 2000);
  CHECK_FALSE(load_synonym_table(s.synonyms_path).empty());

  // Same seed, fresh directory: byte-identical artifacts.
  std::string dir2 = scratch_dir("synth2");
  ExperimentConfig cfg2 = ExperimentConfig::from_map({{"data.out_dir", dir2}});
  auto s2 = cmd_synth(cfg2);
  CHECK(file_bytes(s.corpus_path) == file_bytes(s2.corpus_path));
  CHECK(file_bytes(s.synonyms_path) == file_bytes(s2.synonyms_path));
}

TEST_CASE("cmd_split matches the documented fractions and reruns identically") {
  std::string dir = scratch_dir("split");
  ConfigMap m{{"data.out_dir", dir},
              {"synth.num_examples", "1000"},
              {"synth.na_fraction", "0.2"},
              {"split.labelled_fraction", "0.10"},
              {"split.unlabelled_fraction", "0.50"}};
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  auto s = cmd_split(cfg);
  // 200 NA + 8 classes of 100: the fractions land exactly.
  CHECK(s.labelled == 100);
  CHECK(s.unlabelled == 500);
  CHECK(s.remainder == 400);

  std::string once = file_bytes(s.manifest_path);
  auto again = cmd_split(cfg);
  CHECK(file_bytes(again.manifest_path) == once);

  auto manifest = load_split_manifest(s.manifest_path);
  CHECK(manifest.labelled.size() == 100);
  CHECK(manifest.unlabelled.size() == 500);
}

TEST_CASE("split rejects fraction overflow before writing") {
  std::string dir = scratch_dir("split_overflow");
  ExperimentConfig cfg = tiny_config(dir);
  cmd_synth(cfg);
  cfg.split.labelled_fraction = 0.6;
  cfg.split.unlabelled_fraction = 0.5;
  CHECK_THROWS_AS(cmd_split(cfg), ConfigError);
  CHECK_FALSE(fs::exists(cfg.manifest_path()));
}

TEST_CASE("identity pivot caches exact copies") {
  std::string dir = scratch_dir("aug_identity");
  ConfigMap m = tiny_map(dir);
  m["augment.pivots"] = "identity";
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  cmd_split(cfg);
  auto s = cmd_augment(cfg);
  CHECK(s.fallbacks == 0);
  CHECK(s.failures == 0);
  CHECK(s.satisfied == s.attempts);
  CHECK(s.attempts == s.records);

  auto corpus = load_jsonl(cfg.corpus_path());
  auto split = load_split_manifest(cfg.manifest_path());
  auto cache = load_augmentation_cache(s.cache_path);
  REQUIRE(cache.size() == split.unlabelled.size());
  for (size_t i = 0; i < cache.size(); ++i) {
    REQUIRE(cache[i].size() == 1);
    CHECK(statements_equal(cache[i][0], corpus[split.unlabelled[i]]));
  }
}

TEST_CASE("dead-end pivot falls back to copies for every record") {
  std::string dir = scratch_dir("aug_deadend");
  ExperimentConfig cfg = tiny_config(dir);
  cmd_synth(cfg);
  cmd_split(cfg);
  auto corpus = load_jsonl(cfg.corpus_path());
  auto split = load_split_manifest(cfg.manifest_path());

  std::set<std::string> tokens;
  for (const auto& s : corpus) tokens.insert(s.tokens.begin(), s.tokens.end());
  std::vector<PivotPair> pivots{
      make_dead_end_pivot({tokens.begin(), tokens.end()})};
  auto s = run_augmentation(corpus, split.unlabelled, pivots, cfg);
  CHECK(s.fallbacks == s.records);
  CHECK(s.satisfied == 0);
  CHECK(s.failures == 0);

  auto cache = load_augmentation_cache(cfg.cache_path());
  REQUIRE(cache.size() == split.unlabelled.size());
  for (size_t i = 0; i < cache.size(); ++i) {
    CHECK(statements_equal(cache[i][0], corpus[split.unlabelled[i]]));
  }
}

TEST_CASE("cipher cache retains entities on every record") {
  std::string dir = scratch_dir("aug_cipher");
  ConfigMap m{{"data.out_dir", dir},
              {"synth.num_examples", "1000"},
              {"split.labelled_fraction", "0.05"},
              {"split.unlabelled_fraction", "0.50"}};
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  cmd_split(cfg);
  auto split = load_split_manifest(cfg.manifest_path());
  int records = static_cast<int>(split.unlabelled.size());
  CHECK(records >= 500);  // half of 1000, up to per-class rounding
  CHECK(records <= 505);

  auto s = cmd_augment(cfg);
  CHECK(s.records == records);
  CHECK(s.attempts == 2 * records);  // cipher and shuffle per record
  CHECK(s.failures == 0);

  auto corpus = load_jsonl(cfg.corpus_path());
  auto cache = load_augmentation_cache(s.cache_path);
  REQUIRE(cache.size() == split.unlabelled.size());
  int changed = 0;
  for (size_t i = 0; i < cache.size(); ++i) {
    const auto& original = corpus[split.unlabelled[i]];
    REQUIRE(cache[i].size() == 2);
    for (const auto& aug : cache[i]) {
      aug.validate();
      CHECK(aug.head_phrase() == original.head_phrase());
      CHECK(aug.tail_phrase() == original.tail_phrase());
      CHECK(aug.label == original.label);
      CHECK(aug.head_type == original.head_type);
      if (aug.tokens != original.tokens) ++changed;
    }
  }
  // The cache is not a pile of copies: most augmentations rewrite something.
  CHECK(changed > 500);
}

TEST_CASE("missing augmentation cache names the augment command") {
  std::string dir = scratch_dir("train_nocache");
  ConfigMap m = tiny_map(dir);
  m["train.k"] = "2";
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  cmd_split(cfg);
  try {
    cmd_train(cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("augment") != std::string::npos);
  }

  // A cache sized for a different split is rejected as data, not config.
  auto corpus = load_jsonl(cfg.corpus_path());
  save_augmentation_cache({{corpus[0], corpus[0]}}, cfg.cache_path());
  CHECK_THROWS_AS(cmd_train(cfg), DataError);
}

TEST_CASE("train writes its artifacts and reruns bit-identically") {
  std::string dir = scratch_dir("train_artifacts");
  ExperimentConfig cfg = tiny_config(dir);
  cmd_synth(cfg);
  auto s = cmd_train(cfg);  // no manifest yet: train splits on its own
  CHECK(fs::exists(cfg.manifest_path()));
  CHECK(fs::exists(cfg.checkpoint_path()));
  CHECK(fs::exists(cfg.vocab_path()));
  CHECK(fs::exists(cfg.labels_path()));
  CHECK(file_bytes(cfg.resolved_config_path()) == dump_config(cfg.to_map()));
  CHECK(line_count(cfg.metrics_path()) ==
        static_cast<int>(s.fit.history.size()));

  // Labels file pins NA at index zero.
  std::ifstream labels(cfg.labels_path());
  std::string first;
  std::getline(labels, first);
  CHECK(first == "no_relation");

  std::string checkpoint_once = file_bytes(cfg.checkpoint_path());
  std::string metrics_once = file_bytes(cfg.metrics_path());
  auto s2 = cmd_train(cfg);
  CHECK(file_bytes(cfg.checkpoint_path()) == checkpoint_once);
  CHECK(file_bytes(cfg.metrics_path()) == metrics_once);
  CHECK(s2.fit.best_f1 == s.fit.best_f1);
}

TEST_CASE("gamma_m zero makes k and the cache irrelevant") {
  std::string dir = scratch_dir("train_gm0");
  ConfigMap m = tiny_map(dir);
  m["train.gamma_m"] = "0";
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  cmd_split(cfg);
  cmd_augment(cfg);

  ExperimentConfig with_cache = cfg;
  with_cache.train.K = 2;
  cmd_train(with_cache);
  std::string metrics_cache = file_bytes(cfg.metrics_path());
  std::string checkpoint_cache = file_bytes(cfg.checkpoint_path());

  ExperimentConfig without = cfg;
  without.train.K = 0;
  cmd_train(without);
  CHECK(file_bytes(cfg.metrics_path()) == metrics_cache);
  CHECK(file_bytes(cfg.checkpoint_path()) == checkpoint_cache);
}

TEST_CASE("eval reproduces the trained dev score from disk") {
  std::string dir = scratch_dir("eval");
  ExperimentConfig cfg = tiny_config(dir);
  cmd_synth(cfg);
  cmd_split(cfg);
  auto trained = cmd_train(cfg);

  auto s = cmd_eval(cfg);  // eval.split defaults to dev
  auto manifest = load_split_manifest(cfg.manifest_path());
  CHECK(s.examples == static_cast<int>(manifest.remainder.size()));
  // The checkpoint holds the restored best model, so eval equals best_f1.
  CHECK(s.result.micro_f1 == trained.fit.best_f1);

  json parsed = json::parse(file_bytes(s.eval_path));
  CHECK(parsed.at("split") == "dev");
  CHECK(parsed.at("examples") == s.examples);
  CHECK(parsed.at("micro_f1").get<double>() == s.result.micro_f1);
  CHECK(parsed.at("per_class").size() == 3);  // NA excluded

  cfg.eval_split = "all";
  auto all = cmd_eval(cfg);
  CHECK(all.examples == 180);

  std::string fresh = scratch_dir("eval_fresh");
  ExperimentConfig missing = tiny_config(fresh);
  try {
    cmd_eval(missing);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train") != std::string::npos);
  }
}

TEST_CASE("gridsearch runs incremental trials in fixed axis order") {
  std::string dir = scratch_dir("grid");
  ConfigMap m = tiny_map(dir);
  m["synth.num_examples"] = "120";
  m["train.max_epochs"] = "2";
  m["train.patience"] = "2";
  m["grid.gamma_m"] = "0,0.5";  // listed first in the map...
  m["grid.T"] = "0.5,1.0";      // ...but T is swept first regardless
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  auto s = cmd_gridsearch(cfg);
  REQUIRE(s.trials.size() == 4);
  CHECK(s.trials[0].param == "T");
  CHECK(s.trials[1].param == "T");
  CHECK(s.trials[2].param == "gamma_m");
  CHECK(s.trials[3].param == "gamma_m");
  CHECK(line_count(s.trials_path) == 5);  // four trials plus the best line

  // The later axis inherits the earlier winner.
  double best_T =
      s.trials[0].dev_f1 >= s.trials[1].dev_f1 ? 0.5 : 1.0;
  CHECK(s.best.T == best_T);
  double last_axis_best =
      std::max(s.trials[2].dev_f1, s.trials[3].dev_f1);
  CHECK(s.best_f1 == last_axis_best);
}

TEST_CASE("gridsearch covers the full grid in 19 trials") {
  std::string dir = scratch_dir("grid_full");
  ConfigMap m = tiny_map(dir);
  m["synth.num_examples"] = "120";
  m["train.max_epochs"] = "1";
  m["train.patience"] = "1";
  m["grid.T"] = "0.4,0.6,0.8,1.0";
  m["grid.gamma"] = "0.5,0.7,0.8,0.9";
  m["grid.beta"] = "1,10,30,60,120,190,300,600";
  m["grid.gamma_m"] = "0.5,1,2";
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  auto s = cmd_gridsearch(cfg);
  CHECK(s.trials.size() == 19);  // 4 + 4 + 8 + 3, not 384

  ConfigMap single = tiny_map(scratch_dir("grid_single"));
  single["synth.num_examples"] = "120";
  single["train.max_epochs"] = "1";
  single["train.patience"] = "1";
  single["grid.T"] = "0.5";
  ExperimentConfig one = ExperimentConfig::from_map(single);
  cmd_synth(one);
  auto s1 = cmd_gridsearch(one);
  CHECK(s1.trials.size() == 1);
  CHECK(s1.best.T == 0.5);

  ExperimentConfig none = tiny_config(scratch_dir("grid_none"));
  cmd_synth(none);
  CHECK_THROWS_AS(cmd_gridsearch(none), ConfigError);
  CHECK_THROWS_AS(with_grid_value(none.train, "alpha", 1.0), ConfigError);
}

TEST_CASE("encode_formatted maps marker positions through the vocab") {
  RelationStatement stmt;
  stmt.tokens = {"a", "b", "c", "d"};
  stmt.head = {0, 1};
  stmt.tail = {2, 4};
  stmt.head_type = "PERSON";
  stmt.tail_type = "WORK";
  stmt.label = "rel_0";

  TokenVocab vocab = TokenVocab::build({stmt});
  FormattedInput fi = format_type_markers(stmt);
  EncodedInput x = encode_formatted(vocab, fi);
  REQUIRE(x.ids.size() == fi.tokens.size());
  CHECK(x.ids[0] == kClsId);
  CHECK(x.head_pos == fi.head_marker_pos);
  CHECK(x.tail_pos == fi.tail_marker_pos);
  CHECK(fi.tokens[x.head_pos] == vocab.tokens[x.ids[x.head_pos]]);
  for (int id : x.ids) CHECK(id != kUnkId);
}

TEST_CASE("sanity ceiling: two relations, one template, model reaches F1 1") {
  std::string dir = scratch_dir("ceiling");
  ConfigMap m{{"data.out_dir", dir},
              {"synth.num_relations", "2"},
              {"synth.templates_per_relation", "1"},
              {"synth.connective_variants", "1"},
              {"synth.vocab_size", "12"},
              {"synth.num_examples", "200"},
              {"synth.na_fraction", "0.2"},
              {"split.labelled_fraction", "0.5"},
              {"split.unlabelled_fraction", "0.25"},
              {"encoder.dim", "16"},
              {"encoder.heads", "2"},
              {"encoder.ffn_dim", "32"},
              {"train.gamma_m", "0"},
              {"train.max_epochs", "60"},
              {"train.patience", "60"}};
  ExperimentConfig cfg = ExperimentConfig::from_map(m);
  cmd_synth(cfg);
  auto s = cmd_train(cfg);
  CHECK(s.fit.best_f1 == 1.0);
}
