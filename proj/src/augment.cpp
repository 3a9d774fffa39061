#include "ssre/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "ssre/errors.hpp"

namespace ssre {

using nlohmann::json;

ConstraintSet ConstraintSet::for_statement(const RelationStatement& stmt) {
  ConstraintSet c;
  c.phrases.push_back(stmt.head_phrase());
  c.phrases.push_back(stmt.tail_phrase());
  c.validate();
  return c;
}

int ConstraintSet::total_tokens() const {
  int n = 0;
  for (const auto& p : phrases) n += static_cast<int>(p.size());
  return n;
}

void ConstraintSet::validate() const {
  for (const auto& p : phrases) {
    if (p.empty()) throw DataError("empty constraint phrase");
  }
}

namespace {

std::vector<int> kmp_failure(const std::vector<std::string>& phrase) {
  std::vector<int> f(phrase.size(), 0);
  for (size_t i = 1; i < phrase.size(); ++i) {
    int k = f[i - 1];
    while (k > 0 && phrase[i] != phrase[k]) k = f[k - 1];
    if (phrase[i] == phrase[k]) ++k;
    f[i] = k;
  }
  return f;
}

// All start positions where phrase occurs in tokens.
std::vector<int> occurrences(const std::vector<std::string>& tokens,
                             const std::vector<std::string>& phrase) {
  std::vector<int> starts;
  if (phrase.empty() || tokens.size() < phrase.size()) return starts;
  for (size_t s = 0; s + phrase.size() <= tokens.size(); ++s) {
    bool hit = true;
    for (size_t k = 0; k < phrase.size(); ++k) {
      if (tokens[s + k] != phrase[k]) {
        hit = false;
        break;
      }
    }
    if (hit) starts.push_back(static_cast<int>(s));
  }
  return starts;
}

bool assign_disjoint(const std::vector<std::vector<int>>& starts,
                     const std::vector<int>& lengths, size_t idx,
                     std::vector<Span>& chosen) {
  if (idx == starts.size()) return true;
  for (int s : starts[idx]) {
    Span cand{s, s + lengths[idx]};
    bool clash = false;
    for (const Span& prev : chosen) {
      if (prev.overlaps(cand)) {
        clash = true;
        break;
      }
    }
    if (clash) continue;
    chosen.push_back(cand);
    if (assign_disjoint(starts, lengths, idx + 1, chosen)) return true;
    chosen.pop_back();
  }
  return false;
}

}  // namespace

ConstraintAutomaton::ConstraintAutomaton(const ConstraintSet& constraints) {
  constraints.validate();
  for (const auto& phrase : constraints.phrases) {
    auto it = std::find(phrases_.begin(), phrases_.end(), phrase);
    if (it == phrases_.end()) {
      phrases_.push_back(phrase);
      need_.push_back(1);
      failure_.push_back(kmp_failure(phrase));
    } else {
      need_[it - phrases_.begin()]++;
    }
    total_tokens_ += static_cast<int>(phrase.size());
  }
}

Coverage ConstraintAutomaton::initial() const {
  Coverage c;
  c.progress.assign(phrases_.size(), 0);
  c.count.assign(phrases_.size(), 0);
  return c;
}

Coverage ConstraintAutomaton::advance(const Coverage& cov,
                                      const std::string& token) const {
  Coverage next = cov;
  for (size_t i = 0; i < phrases_.size(); ++i) {
    const auto& phrase = phrases_[i];
    int p = next.progress[i];
    while (p > 0 && phrase[p] != token) p = failure_[i][p - 1];
    if (phrase[p] == token) ++p;
    if (p == static_cast<int>(phrase.size())) {
      // Greedy non-overlapping occurrence: restart cold.
      next.count[i]++;
      p = 0;
    }
    next.progress[i] = p;
  }
  return next;
}

Coverage ConstraintAutomaton::rederive(
    const std::vector<std::string>& tokens) const {
  Coverage c = initial();
  for (const auto& t : tokens) c = advance(c, t);
  return c;
}

int ConstraintAutomaton::covered_tokens(const Coverage& cov) const {
  int covered = 0;
  for (size_t i = 0; i < phrases_.size(); ++i) {
    int len = static_cast<int>(phrases_[i].size());
    covered += std::min(cov.count[i], need_[i]) * len;
    if (cov.count[i] < need_[i]) covered += cov.progress[i];
  }
  return covered;
}

bool ConstraintAutomaton::satisfied(const Coverage& cov) const {
  for (size_t i = 0; i < phrases_.size(); ++i) {
    if (cov.count[i] < need_[i]) return false;
  }
  return true;
}

std::optional<std::vector<Span>> ConstraintAutomaton::find_disjoint_spans(
    const std::vector<std::string>& tokens,
    const ConstraintSet& constraints) {
  std::vector<std::vector<int>> starts;
  std::vector<int> lengths;
  for (const auto& phrase : constraints.phrases) {
    starts.push_back(occurrences(tokens, phrase));
    lengths.push_back(static_cast<int>(phrase.size()));
    if (starts.back().empty()) return std::nullopt;
  }
  std::vector<Span> chosen;
  if (!assign_disjoint(starts, lengths, 0, chosen)) return std::nullopt;
  return chosen;
}

namespace {

struct Candidate {
  int parent;
  int token;
  double score;
};

// Expands every active hypothesis with every legal next token and returns
// the candidates ordered by (score desc, parent, token). Both decoders use
// this, so their arithmetic and ordering are identical.
std::vector<Candidate> expand_sorted(const TranslationModel& model,
                                     const std::vector<std::string>& source,
                                     const std::vector<BeamHypothesis>& active,
                                     int max_len) {
  std::vector<Candidate> out;
  int v = static_cast<int>(model.vocab().size());
  for (size_t h = 0; h < active.size(); ++h) {
    Eigen::VectorXd lp = model.step(source, active[h].tokens);
    if (lp.size() != v) throw DataError("model scored the wrong vocabulary");
    if (static_cast<int>(active[h].tokens.size()) >= max_len) {
      out.push_back({static_cast<int>(h), model.eos_id(),
                     active[h].score + lp[model.eos_id()]});
      continue;
    }
    for (int t = 0; t < v; ++t) {
      out.push_back({static_cast<int>(h), t, active[h].score + lp[t]});
    }
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.parent != b.parent) return a.parent < b.parent;
    return a.token < b.token;
  });
  return out;
}

void check_decode_args(int beam, int max_len) {
  if (beam < 1) throw ConfigError("beam width must be positive");
  if (max_len < 1) throw ConfigError("max_len must be positive");
}

std::vector<BeamHypothesis> sort_finalists(std::vector<BeamHypothesis> f) {
  std::stable_sort(f.begin(), f.end(),
                   [](const BeamHypothesis& a, const BeamHypothesis& b) {
                     return a.score > b.score;
                   });
  return f;
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const TranslationModel& model,
                                        const std::vector<std::string>& source,
                                        int beam, int max_len) {
  check_decode_args(beam, max_len);
  std::vector<BeamHypothesis> active{BeamHypothesis{}};
  std::vector<BeamHypothesis> finalists;
  while (!active.empty()) {
    auto candidates = expand_sorted(model, source, active, max_len);
    std::vector<BeamHypothesis> next;
    int taken = 0;
    for (const auto& c : candidates) {
      if (taken == beam) break;
      ++taken;
      if (c.token == model.eos_id()) {
        finalists.push_back(
            BeamHypothesis{active[c.parent].tokens, c.score, Coverage{}});
      } else {
        BeamHypothesis h{active[c.parent].tokens, c.score, Coverage{}};
        h.tokens.push_back(model.vocab()[c.token]);
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }
  return sort_finalists(std::move(finalists));
}

std::vector<std::string> constrained_beam_search(
    const TranslationModel& model, const std::vector<std::string>& source,
    const ConstraintSet& constraints, int beam, int max_len) {
  check_decode_args(beam, max_len);
  ConstraintAutomaton automaton(constraints);
  int banks = automaton.total_tokens() + 1;
  if (beam < banks) {
    throw ConfigError("beam width " + std::to_string(beam) +
                      " below the " + std::to_string(banks) +
                      " constraint banks");
  }
  if (max_len < automaton.total_tokens()) {
    throw ConfigError("max_len cannot fit the constraints");
  }

  std::vector<BeamHypothesis> active{
      BeamHypothesis{{}, 0.0, automaton.initial()}};
  std::vector<BeamHypothesis> finalists;
  while (!active.empty()) {
    auto candidates = expand_sorted(model, source, active, max_len);

    // Bank each candidate by its locked-in constraint tokens, preserving
    // the global score order within banks.
    std::map<int, std::vector<size_t>, std::greater<int>> by_bank;
    std::vector<Coverage> cand_cov(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
      const auto& c = candidates[i];
      if (c.token == model.eos_id()) {
        cand_cov[i] = active[c.parent].coverage;
      } else {
        cand_cov[i] = automaton.advance(active[c.parent].coverage,
                                        model.vocab()[c.token]);
      }
      by_bank[automaton.covered_tokens(cand_cov[i])].push_back(i);
    }

    // Spread the beam across the occupied banks, most progressed first;
    // whatever the quotas cannot fill goes to the best of the rest.
    size_t occupied = by_bank.size();
    int base = beam / static_cast<int>(occupied);
    int extra = beam % static_cast<int>(occupied);
    std::vector<char> selected(candidates.size(), 0);
    int taken = 0;
    int rank = 0;
    for (auto& [bank, members] : by_bank) {
      int quota = base + (rank < extra ? 1 : 0);
      ++rank;
      for (size_t k = 0; k < members.size() && quota > 0; ++k, --quota) {
        selected[members[k]] = 1;
        ++taken;
      }
    }
    for (size_t i = 0; i < candidates.size() && taken < beam; ++i) {
      if (!selected[i]) {
        selected[i] = 1;
        ++taken;
      }
    }

    std::vector<BeamHypothesis> next;
    for (size_t i = 0; i < candidates.size(); ++i) {
      if (!selected[i]) continue;
      const auto& c = candidates[i];
      if (c.token == model.eos_id()) {
        if (automaton.satisfied(cand_cov[i]) &&
            ConstraintAutomaton::find_disjoint_spans(active[c.parent].tokens,
                                                     constraints)) {
          finalists.push_back(
              BeamHypothesis{active[c.parent].tokens, c.score, cand_cov[i]});
        }
      } else {
        BeamHypothesis h{active[c.parent].tokens, c.score, cand_cov[i]};
        h.tokens.push_back(model.vocab()[c.token]);
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }
  if (finalists.empty()) {
    throw UnsatisfiableError(
        "no constraint-complete hypothesis within the length budget");
  }
  return sort_finalists(std::move(finalists)).front().tokens;
}

const BeamHypothesis& sample_finalist(
    const std::vector<BeamHypothesis>& finalists, double temperature,
    Rng& rng) {
  if (finalists.empty()) throw DataError("no finalists to sample from");
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (temperature == 0.0) return finalists.front();
  double mx = finalists[0].score;
  for (const auto& f : finalists) mx = std::max(mx, f.score);
  std::vector<double> w(finalists.size());
  double z = 0.0;
  for (size_t i = 0; i < finalists.size(); ++i) {
    w[i] = std::exp((finalists[i].score - mx) / temperature);
    z += w[i];
  }
  double u = rng.uniform() * z;
  double acc = 0.0;
  for (size_t i = 0; i < finalists.size(); ++i) {
    acc += w[i];
    if (u < acc) return finalists[i];
  }
  return finalists.back();
}

RelationStatement back_translate(const RelationStatement& stmt,
                                 const PivotPair& pivot, double temperature,
                                 Rng& rng, const DecodeOptions& opts) {
  stmt.validate();
  ConstraintSet constraints = ConstraintSet::for_statement(stmt);

  int fwd_max = static_cast<int>(stmt.tokens.size()) + opts.extra_len;
  auto finalists =
      beam_search(*pivot.forward, stmt.tokens, opts.beam, fwd_max);
  const auto& pivot_seq = sample_finalist(finalists, temperature, rng).tokens;

  int banks = constraints.total_tokens() + 1;
  int bwd_beam = std::max(opts.beam, banks);
  int bwd_max = std::max(static_cast<int>(pivot_seq.size()) + opts.extra_len,
                         constraints.total_tokens());
  auto out_tokens = constrained_beam_search(*pivot.backward, pivot_seq,
                                            constraints, bwd_beam, bwd_max);

  auto spans = ConstraintAutomaton::find_disjoint_spans(out_tokens, constraints);
  if (!spans) {
    // Decoding only finalizes hypotheses that pass this same check.
    throw DataError("decoded output lost its constraints");
  }
  RelationStatement out;
  out.tokens = out_tokens;
  out.head = (*spans)[0];
  out.tail = (*spans)[1];
  out.head_type = stmt.head_type;
  out.tail_type = stmt.tail_type;
  out.label = stmt.label;
  out.validate();
  return out;
}

std::vector<RelationStatement> generate_augmentations(
    const RelationStatement& stmt, const std::vector<PivotPair>& pivots,
    double temperature, Rng& rng, const DecodeOptions& opts) {
  if (pivots.empty()) throw ConfigError("need at least one pivot");
  std::vector<RelationStatement> out;
  for (const auto& pivot : pivots) {
    try {
      out.push_back(back_translate(stmt, pivot, temperature, rng, opts));
    } catch (const UnsatisfiableError&) {
      out.push_back(stmt);
    }
  }
  return out;
}

void save_augmentation_cache(
    const std::vector<std::vector<RelationStatement>>& cache,
    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (size_t i = 0; i < cache.size(); ++i) {
    json line;
    line["index"] = i;
    json augs = json::array();
    for (const auto& s : cache[i]) augs.push_back(json::parse(statement_to_json(s)));
    line["augmentations"] = augs;
    out << line.dump() << "\n";
  }
}

std::vector<std::vector<RelationStatement>> load_augmentation_cache(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<RelationStatement>> cache;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      if (j.at("index").get<size_t>() != cache.size()) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": cache indices must be dense and ordered");
      }
      std::vector<RelationStatement> augs;
      for (const auto& a : j.at("augmentations")) {
        augs.push_back(statement_from_json(a.dump()));
      }
      cache.push_back(std::move(augs));
    } catch (const json::exception& e) {
      throw ParseError(path + " line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return cache;
}

}  // namespace ssre
