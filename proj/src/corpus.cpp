#include "ssre/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ssre/errors.hpp"
#include "ssre/rng.hpp"

namespace ssre {

using nlohmann::json;

std::vector<std::string> RelationStatement::head_phrase() const {
  return {tokens.begin() + head.start, tokens.begin() + head.end};
}

std::vector<std::string> RelationStatement::tail_phrase() const {
  return {tokens.begin() + tail.start, tokens.begin() + tail.end};
}

void RelationStatement::validate() const {
  int n = static_cast<int>(tokens.size());
  auto check_span = [&](const Span& s, const char* name) {
    if (s.start < 0 || s.start >= s.end || s.end > n) {
      throw DataError(std::string(name) + " span [" + std::to_string(s.start) +
                      "," + std::to_string(s.end) +
                      ") is invalid for a sentence of " + std::to_string(n) +
                      " tokens");
    }
  };
  check_span(head, "head");
  check_span(tail, "tail");
  if (head.overlaps(tail)) {
    throw DataError("head and tail spans overlap");
  }
  if (head_type.has_value() != tail_type.has_value()) {
    throw DataError("head_type and tail_type must be present together");
  }
}

LabelVocab LabelVocab::from_labels(const std::vector<std::string>& labels,
                                   const std::string& na_name) {
  std::set<std::string> names(labels.begin(), labels.end());
  names.erase(na_name);
  LabelVocab v;
  v.relations.push_back(na_name);
  v.relations.insert(v.relations.end(), names.begin(), names.end());
  return v;
}

int LabelVocab::index_of(const std::string& name) const {
  auto it = std::find(relations.begin(), relations.end(), name);
  if (it == relations.end()) {
    throw DataError("unknown relation label: " + name);
  }
  return static_cast<int>(it - relations.begin());
}

LabelDistribution LabelDistribution::one_hot(int index, int size) {
  LabelDistribution d;
  d.probs = Eigen::VectorXd::Zero(size);
  d.probs[index] = 1.0;
  return d;
}

void LabelDistribution::validate() const {
  if (probs.size() == 0) throw DataError("empty label distribution");
  if ((probs.array() < 0.0).any()) {
    throw DataError("label distribution has a negative entry");
  }
  if (std::abs(probs.sum() - 1.0) > 1e-6) {
    throw DataError("label distribution does not sum to 1");
  }
}

int LabelDistribution::argmax() const {
  int best = 0;
  probs.maxCoeff(&best);
  return best;
}

void SplitSpec::validate() const {
  if (!(labelled_fraction > 0.0 && labelled_fraction <= 1.0)) {
    throw ConfigError("labelled_fraction must be in (0, 1]");
  }
  if (!(unlabelled_fraction >= 0.0 && unlabelled_fraction < 1.0)) {
    throw ConfigError("unlabelled_fraction must be in [0, 1)");
  }
  if (labelled_fraction + unlabelled_fraction > 1.0) {
    throw ConfigError("labelled_fraction + unlabelled_fraction must be <= 1");
  }
}

std::vector<std::string> FormattedInput::strip_markers() const {
  std::vector<std::string> out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (source_index[i] >= 0) out.push_back(tokens[i]);
  }
  return out;
}

namespace {

Span parse_span(const json& j, const char* name, size_t line_no) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() ||
      !j[1].is_number_integer()) {
    throw ParseError("line " + std::to_string(line_no) + ": " + name +
                     " must be a two-element integer array");
  }
  return Span{j[0].get<int>(), j[1].get<int>()};
}

std::optional<std::string> parse_optional_string(const json& record,
                                                 const char* key) {
  if (!record.contains(key) || record[key].is_null()) return std::nullopt;
  return record[key].get<std::string>();
}

}  // namespace

RelationStatement statement_from_json(const std::string& line) {
  json record = json::parse(line);
  RelationStatement s;
  for (const auto& t : record.at("tokens")) s.tokens.push_back(t.get<std::string>());
  s.head = parse_span(record.at("head"), "head", 0);
  s.tail = parse_span(record.at("tail"), "tail", 0);
  s.head_type = parse_optional_string(record, "head_type");
  s.tail_type = parse_optional_string(record, "tail_type");
  s.label = parse_optional_string(record, "relation");
  s.validate();
  return s;
}

std::string statement_to_json(const RelationStatement& s) {
  json record;
  record["tokens"] = s.tokens;
  record["head"] = {s.head.start, s.head.end};
  record["tail"] = {s.tail.start, s.tail.end};
  record["head_type"] = s.head_type ? json(*s.head_type) : json(nullptr);
  record["tail_type"] = s.tail_type ? json(*s.tail_type) : json(nullptr);
  record["relation"] = s.label ? json(*s.label) : json(nullptr);
  return record.dump();
}

std::vector<RelationStatement> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<RelationStatement> out;
  std::string line;
  size_t line_no = 0;
  std::optional<bool> dataset_typed;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    RelationStatement s;
    try {
      s = statement_from_json(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (dataset_typed.has_value() && *dataset_typed != s.typed()) {
      throw DataError("line " + std::to_string(line_no) +
                      ": dataset mixes typed and untyped records");
    }
    dataset_typed = s.typed();
    out.push_back(std::move(s));
  }
  return out;
}

void save_jsonl(const std::vector<RelationStatement>& data,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& s : data) out << statement_to_json(s) << "\n";
}

namespace {

// Shared marker insertion: walks the sentence and emits entity blocks at
// span starts. `render` appends the block for one entity given its tokens.
struct EntityBlock {
  std::vector<std::string> open;   // tokens before the entity words
  std::vector<std::string> close;  // tokens after the entity words
};

FormattedInput format_with_blocks(const RelationStatement& stmt,
                                  const EntityBlock& head_block,
                                  const EntityBlock& tail_block,
                                  MarkerScheme scheme) {
  stmt.validate();
  FormattedInput out;
  out.scheme = scheme;
  auto push = [&](const std::string& tok, int src) {
    out.tokens.push_back(tok);
    out.source_index.push_back(src);
  };
  push(kClsToken, -1);
  int n = static_cast<int>(stmt.tokens.size());
  for (int i = 0; i <= n; ++i) {
    // Closes before opens, so adjacent spans nest correctly.
    if (i == stmt.head.end) {
      for (const auto& t : head_block.close) push(t, -1);
    }
    if (i == stmt.tail.end) {
      for (const auto& t : tail_block.close) push(t, -1);
    }
    if (i == stmt.head.start) {
      out.head_marker_pos = out.length();
      for (const auto& t : head_block.open) push(t, -1);
    }
    if (i == stmt.tail.start) {
      out.tail_marker_pos = out.length();
      for (const auto& t : tail_block.open) push(t, -1);
    }
    if (i < n) push(stmt.tokens[i], i);
  }
  return out;
}

}  // namespace

std::vector<std::string> type_label_words(const std::string& type_label) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : type_label) {
    if (c == '_') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

FormattedInput format_entity_markers(const RelationStatement& stmt) {
  EntityBlock head{{kHeadOpen}, {kHeadClose}};
  EntityBlock tail{{kTailOpen}, {kTailClose}};
  return format_with_blocks(stmt, head, tail, MarkerScheme::entity_markers);
}

FormattedInput format_type_markers(const RelationStatement& stmt) {
  if (!stmt.head_type || !stmt.tail_type) {
    throw DataError("type markers require head_type and tail_type");
  }
  auto block = [](const char* mark, const std::string& type_label) {
    EntityBlock b;
    b.open.push_back(mark);
    b.open.push_back(kTypeSep);
    for (auto& w : type_label_words(type_label)) b.open.push_back(w);
    b.open.push_back(kTypeSep);
    b.close.push_back(mark);
    return b;
  };
  return format_with_blocks(stmt, block(kSubjectMark, *stmt.head_type),
                            block(kObjectMark, *stmt.tail_type),
                            MarkerScheme::type_markers);
}

SplitResult stratified_split(const std::vector<RelationStatement>& data,
                             const SplitSpec& spec) {
  spec.validate();
  // Group indices by label, in sorted label order for determinism.
  std::map<std::string, std::vector<int>> by_label;
  for (size_t i = 0; i < data.size(); ++i) {
    if (!data[i].label) {
      throw DataError("stratified_split requires labelled data (record " +
                      std::to_string(i) + " is unlabelled)");
    }
    by_label[*data[i].label].push_back(static_cast<int>(i));
  }
  Rng rng(spec.seed);
  SplitResult result;
  result.spec = spec;
  for (auto& [label, indices] : by_label) {
    rng.shuffle(indices);
    int c = static_cast<int>(indices.size());
    int n_lab = static_cast<int>(std::llround(spec.labelled_fraction * c));
    int n_unlab = static_cast<int>(std::llround(spec.unlabelled_fraction * c));
    if (n_lab > c) n_lab = c;
    if (n_lab + n_unlab > c) n_unlab = c - n_lab;
    for (int i = 0; i < c; ++i) {
      if (i < n_lab) {
        result.labelled.push_back(indices[i]);
      } else if (i < n_lab + n_unlab) {
        result.unlabelled.push_back(indices[i]);
      } else {
        result.remainder.push_back(indices[i]);
      }
    }
  }
  std::sort(result.labelled.begin(), result.labelled.end());
  std::sort(result.unlabelled.begin(), result.unlabelled.end());
  std::sort(result.remainder.begin(), result.remainder.end());
  return result;
}

DatasetStats dataset_stats(const std::vector<RelationStatement>& data,
                           const LabelVocab& vocab) {
  DatasetStats stats;
  stats.num_examples = static_cast<int>(data.size());
  std::set<std::string> seen;
  int na_count = 0;
  for (const auto& s : data) {
    if (!s.label) throw DataError("dataset_stats requires labelled data");
    seen.insert(*s.label);
    if (*s.label == vocab.na()) ++na_count;
  }
  stats.num_relations = static_cast<int>(seen.size());
  stats.na_fraction =
      data.empty() ? 0.0 : static_cast<double>(na_count) / data.size();
  return stats;
}

void save_split_manifest(const SplitResult& split, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  json header;
  header["kind"] = "split_manifest";
  header["labelled_fraction"] = split.spec.labelled_fraction;
  header["unlabelled_fraction"] = split.spec.unlabelled_fraction;
  header["seed"] = split.spec.seed;
  out << header.dump() << "\n";
  auto part = [&](const char* name, const std::vector<int>& idx) {
    json j;
    j["part"] = name;
    j["indices"] = idx;
    out << j.dump() << "\n";
  };
  part("labelled", split.labelled);
  part("unlabelled", split.unlabelled);
  part("remainder", split.remainder);
}

SplitResult load_split_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty manifest");
  SplitResult result;
  try {
    json header = json::parse(line);
    if (header.at("kind") != "split_manifest") {
      throw ParseError(path + ": not a split manifest");
    }
    result.spec.labelled_fraction = header.at("labelled_fraction");
    result.spec.unlabelled_fraction = header.at("unlabelled_fraction");
    result.spec.seed = header.at("seed");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      std::string part = j.at("part");
      std::vector<int>* target =
          part == "labelled"     ? &result.labelled
          : part == "unlabelled" ? &result.unlabelled
          : part == "remainder"  ? &result.remainder
                                 : nullptr;
      if (!target) throw ParseError(path + ": unknown part " + part);
      *target = j.at("indices").get<std::vector<int>>();
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return result;
}

}  // namespace ssre
