#include "focusft/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "focusft/rng.hpp"

namespace focusft {

using nlohmann::json;

Vocab Vocab::make(int vocab_size) {
  check(vocab_size >= 24, "Vocab: vocab_size must be >= 24");
  Vocab v;
  v.vocab_size = vocab_size;
  const int pool = vocab_size - kSpecials;
  v.n_keys = pool / 4;
  v.n_values = pool / 4;
  v.n_filler = pool - v.n_keys - v.n_values;
  return v;
}

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::SingleFact: return "single_fact";
    case TaskKind::TwoFact: return "two_fact";
    case TaskKind::MultiValue: return "multi_value";
    case TaskKind::Aggregation: return "aggregation";
  }
  fail("task_kind_name: unknown kind");
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "single_fact") return TaskKind::SingleFact;
  if (name == "two_fact") return TaskKind::TwoFact;
  if (name == "multi_value") return TaskKind::MultiValue;
  if (name == "aggregation") return TaskKind::Aggregation;
  fail("task_kind_from_name: unknown kind: " + name);
}

void Sample::validate(const Vocab& vocab) const {
  seg.validate();
  check(static_cast<int>(tokens.size()) == seg.length(), "Sample: token/seg length mismatch");
  for (int t : tokens)
    check(t >= 0 && t < vocab.vocab_size, "Sample: token out of range");
  for (int i : answer_span)
    check(seg.is_response(i), "Sample: answer span outside response");
  for (int i : needle_positions)
    check(seg.is_context(i), "Sample: needle outside context");
  region_map.validate(seg.length());
  check(region_map.covers_exactly(seg.length()), "Sample: region map is not a partition");
}

namespace {

struct Skeleton {
  Sample s;
  int ctx_len = 0;
  std::vector<int> turn_start;  // context turns, plus sentinel ctx_len
  std::vector<char> reserved;   // marker or already-planted positions
};

// Context of n_ctx_turns turns (BOS SYS ... | TOOL ... | ...), then a query
// turn of query_len tokens and a response turn of resp_len tokens.
Skeleton make_skeleton(const Vocab& vocab, int seq_len, int query_len,
                       int resp_len, int n_ctx_turns, Rng& rng) {
  Skeleton sk;
  sk.ctx_len = seq_len - query_len - resp_len;
  check(n_ctx_turns >= 1, "taskgen: need at least one context turn");
  check(sk.ctx_len >= std::max(12, 8 * n_ctx_turns),
        "taskgen: seq_len too small for the template");
  Sample& s = sk.s;
  s.tokens.assign(seq_len, 0);
  s.seg.labels.assign(seq_len, TokenLabel::Context);
  s.seg.turn_ids.assign(seq_len, 0);
  sk.reserved.assign(seq_len, 0);

  for (int t = 0; t <= n_ctx_turns; ++t)
    sk.turn_start.push_back(static_cast<int>(
        static_cast<long long>(t) * sk.ctx_len / n_ctx_turns));

  for (int i = 0; i < sk.ctx_len; ++i)
    s.tokens[i] = vocab.filler_id(static_cast<int>(rng.uniform_index(vocab.n_filler)));
  s.tokens[0] = Vocab::kBos;
  s.tokens[1] = Vocab::kSys;
  sk.reserved[0] = sk.reserved[1] = 1;
  for (int t = 1; t < n_ctx_turns; ++t) {
    s.tokens[sk.turn_start[t]] = Vocab::kTool;
    sk.reserved[sk.turn_start[t]] = 1;
  }
  for (int t = 0; t < n_ctx_turns; ++t)
    for (int i = sk.turn_start[t]; i < sk.turn_start[t + 1]; ++i)
      s.seg.turn_ids[i] = t;

  // Query turn (context) and response turn.
  for (int i = sk.ctx_len; i < sk.ctx_len + query_len; ++i) {
    s.seg.turn_ids[i] = n_ctx_turns;
    sk.reserved[i] = 1;
  }
  for (int i = sk.ctx_len + query_len; i < seq_len; ++i) {
    s.seg.labels[i] = TokenLabel::Response;
    s.seg.turn_ids[i] = n_ctx_turns + 1;
    sk.reserved[i] = 1;
  }

  RegionMap& rm = s.region_map;
  rm.sink_window_width = 5;
  check(sk.turn_start[1] > 5, "taskgen: first turn shorter than the sink window");
  rm.ranges.push_back({RegionTag::SinkWindow, 0, 5});
  rm.ranges.push_back({RegionTag::SystemUser, 5, sk.turn_start[1]});
  for (int t = 1; t < n_ctx_turns; ++t)
    rm.ranges.push_back({RegionTag::ToolResponse, sk.turn_start[t], sk.turn_start[t + 1]});
  rm.ranges.push_back({RegionTag::SystemUser, sk.ctx_len, sk.ctx_len + query_len});
  rm.ranges.push_back({RegionTag::AssistantResponse, sk.ctx_len + query_len, seq_len});
  return sk;
}

bool pair_slot_free(const Skeleton& sk, int p) {
  return p >= 2 && p + 1 < sk.ctx_len && !sk.reserved[p] && !sk.reserved[p + 1];
}

// Nearest free pair slot at or after `target`, wrapping once.
int place_pair(Skeleton& sk, int target) {
  const int lo = 2, hi = sk.ctx_len - 2;
  int p = std::clamp(target, lo, hi);
  for (int trial = 0; trial < sk.ctx_len; ++trial) {
    if (pair_slot_free(sk, p)) {
      sk.reserved[p] = sk.reserved[p + 1] = 1;
      return p;
    }
    p = p + 1 > hi ? lo : p + 1;
  }
  fail("taskgen: no free slot for a fact");
}

int place_pair_in_turn(Skeleton& sk, int turn, Rng& rng) {
  const int lo = std::max(2, sk.turn_start[turn] + 1);
  const int hi = sk.turn_start[turn + 1] - 2;
  check(hi >= lo, "taskgen: turn too small for a fact");
  return place_pair(sk, lo + static_cast<int>(rng.uniform_index(hi - lo + 1)));
}

int pick_value(const Vocab& vocab, int key_index, const PairPool* pool, Rng& rng) {
  if (!pool) return vocab.value_id(static_cast<int>(rng.uniform_index(vocab.n_values)));
  const auto& allowed = pool->allowed_values[key_index];
  check(!allowed.empty(), "taskgen: empty value pool for key");
  return allowed[rng.uniform_index(allowed.size())];
}

void fill_query(Sample& s, int ctx_len, int key_id) {
  s.tokens[ctx_len] = Vocab::kUser;
  s.tokens[ctx_len + 1] = Vocab::kQuery;
  s.tokens[ctx_len + 2] = key_id;
  s.tokens[ctx_len + 3] = Vocab::kSep;
}

}  // namespace

Sample gen_single_fact(const Vocab& vocab, int seq_len, double needle_depth,
                       uint64_t seed, const PairPool* pool) {
  check(needle_depth >= 0.0 && needle_depth <= 1.0, "gen_single_fact: depth in [0,1]");
  Rng rng(seed);
  const int n_turns = std::min(5, std::max(1, (seq_len - 7) / 24));
  Skeleton sk = make_skeleton(vocab, seq_len, 4, 3, n_turns, rng);
  Sample& s = sk.s;

  const int key_index = static_cast<int>(rng.uniform_index(vocab.n_keys));
  const int key = vocab.key_id(key_index);
  const int value = pick_value(vocab, key_index, pool, rng);
  const int target = 2 + static_cast<int>(std::lround(needle_depth * (sk.ctx_len - 4)));
  const int p = place_pair(sk, target);
  s.tokens[p] = key;
  s.tokens[p + 1] = value;
  s.needle_positions = {p, p + 1};

  fill_query(s, sk.ctx_len, key);
  s.tokens[seq_len - 3] = Vocab::kAssist;
  s.tokens[seq_len - 2] = value;
  s.tokens[seq_len - 1] = Vocab::kEos;
  s.answer_span = {seq_len - 2};
  s.kind = TaskKind::SingleFact;
  s.seed = seed;
  s.validate(vocab);
  return s;
}

Sample gen_two_fact(const Vocab& vocab, int seq_len, uint64_t seed,
                    const PairPool* pool) {
  Rng rng(seed);
  const int n_turns = std::min(5, std::max(2, (seq_len - 7) / 24));
  Skeleton sk = make_skeleton(vocab, seq_len, 4, 3, n_turns, rng);
  Sample& s = sk.s;

  const int ki = static_cast<int>(rng.uniform_index(vocab.n_keys));
  int ai = static_cast<int>(rng.uniform_index(vocab.n_keys - 1));
  if (ai >= ki) ++ai;  // intermediate key differs from the query key
  const int key = vocab.key_id(ki);
  const int mid = vocab.key_id(ai);
  const int value = pick_value(vocab, ki, pool, rng);

  int t1 = static_cast<int>(rng.uniform_index(n_turns));
  int t2 = static_cast<int>(rng.uniform_index(n_turns - 1));
  if (t2 >= t1) ++t2;  // facts land in distinct turns
  const int p1 = place_pair_in_turn(sk, t1, rng);  // key -> mid
  const int p2 = place_pair_in_turn(sk, t2, rng);  // mid -> value
  s.tokens[p1] = key;
  s.tokens[p1 + 1] = mid;
  s.tokens[p2] = mid;
  s.tokens[p2 + 1] = value;
  s.needle_positions = {p1, p1 + 1, p2, p2 + 1};

  fill_query(s, sk.ctx_len, key);
  s.tokens[seq_len - 3] = Vocab::kAssist;
  s.tokens[seq_len - 2] = value;
  s.tokens[seq_len - 1] = Vocab::kEos;
  s.answer_span = {seq_len - 2};
  s.kind = TaskKind::TwoFact;
  s.seed = seed;
  s.validate(vocab);
  return s;
}

Sample gen_multi_value(const Vocab& vocab, int seq_len, uint64_t seed,
                       const PairPool* pool) {
  Rng rng(seed);
  const int n_turns = std::min(5, std::max(2, (seq_len - 8) / 24));
  Skeleton sk = make_skeleton(vocab, seq_len, 4, 4, n_turns, rng);
  Sample& s = sk.s;

  const int ki = static_cast<int>(rng.uniform_index(vocab.n_keys));
  const int key = vocab.key_id(ki);
  int v1 = pick_value(vocab, ki, pool, rng);
  int v2 = pick_value(vocab, ki, pool, rng);
  for (int guard = 0; v2 == v1 && guard < 64; ++guard)
    v2 = pick_value(vocab, ki, pool, rng);
  check(v2 != v1, "gen_multi_value: value pool too small");

  int t1 = static_cast<int>(rng.uniform_index(n_turns));
  int t2 = static_cast<int>(rng.uniform_index(n_turns - 1));
  if (t2 >= t1) ++t2;
  if (t1 > t2) {
    std::swap(t1, t2);  // v1 is the earlier occurrence
  }
  const int p1 = place_pair_in_turn(sk, t1, rng);
  const int p2 = place_pair_in_turn(sk, t2, rng);
  s.tokens[p1] = key;
  s.tokens[p1 + 1] = v1;
  s.tokens[p2] = key;
  s.tokens[p2 + 1] = v2;
  s.needle_positions = {p1, p1 + 1, p2, p2 + 1};

  fill_query(s, sk.ctx_len, key);
  s.tokens[seq_len - 4] = Vocab::kAssist;
  s.tokens[seq_len - 3] = v1;
  s.tokens[seq_len - 2] = v2;
  s.tokens[seq_len - 1] = Vocab::kEos;
  s.answer_span = {seq_len - 3, seq_len - 2};
  s.kind = TaskKind::MultiValue;
  s.seed = seed;
  s.validate(vocab);
  return s;
}

Sample gen_aggregation(const Vocab& vocab, int seq_len, uint64_t seed,
                       const PairPool* pool) {
  Rng rng(seed);
  const int n_turns = std::min(5, std::max(1, (seq_len - 6) / 24));
  Skeleton sk = make_skeleton(vocab, seq_len, 3, 3, n_turns, rng);
  Sample& s = sk.s;

  // Most-frequent key wins; counts are strictly decreasing so the argmax is
  // unique.
  int answer_index;
  if (pool) {
    check(!pool->answer_keys.empty(), "gen_aggregation: empty answer-key pool");
    answer_index = pool->answer_keys[rng.uniform_index(pool->answer_keys.size())] -
                   vocab.key_id(0);
  } else {
    answer_index = static_cast<int>(rng.uniform_index(vocab.n_keys));
  }
  int d1 = static_cast<int>(rng.uniform_index(vocab.n_keys - 1));
  if (d1 >= answer_index) ++d1;
  int d2 = static_cast<int>(rng.uniform_index(vocab.n_keys - 2));
  if (d2 >= std::min(answer_index, d1)) ++d2;
  if (d2 >= std::max(answer_index, d1)) ++d2;
  const int counts[3] = {4, 2, 1};
  const int keys[3] = {vocab.key_id(answer_index), vocab.key_id(d1), vocab.key_id(d2)};
  for (int g = 0; g < 3; ++g) {
    for (int c = 0; c < counts[g]; ++c) {
      // standalone occurrence; a pair slot keeps a filler successor
      const int p = place_pair(sk, 2 + static_cast<int>(rng.uniform_index(sk.ctx_len - 4)));
      s.tokens[p] = keys[g];
      s.needle_positions.push_back(p);
    }
  }
  std::sort(s.needle_positions.begin(), s.needle_positions.end());

  s.tokens[sk.ctx_len] = Vocab::kUser;
  s.tokens[sk.ctx_len + 1] = Vocab::kQuery;
  s.tokens[sk.ctx_len + 2] = Vocab::kSep;
  s.tokens[seq_len - 3] = Vocab::kAssist;
  s.tokens[seq_len - 2] = keys[0];
  s.tokens[seq_len - 1] = Vocab::kEos;
  s.answer_span = {seq_len - 2};
  s.kind = TaskKind::Aggregation;
  s.seed = seed;
  s.validate(vocab);
  return s;
}

Sample gen_multiturn_agentic(const Vocab& vocab, int seq_len, int n_turns,
                             uint64_t seed) {
  check(n_turns >= 2, "gen_multiturn_agentic: need at least 2 turns");
  Rng rng(seed);
  const int resp_each = 3;  // ASSIST value SEP (EOS on the last turn)
  const int ctx_total = seq_len - resp_each * n_turns;
  check(ctx_total >= 12 * n_turns, "gen_multiturn_agentic: seq_len too small");

  Sample s;
  s.tokens.assign(seq_len, 0);
  s.seg.labels.assign(seq_len, TokenLabel::Context);
  s.seg.turn_ids.assign(seq_len, 0);
  s.kind = TaskKind::SingleFact;
  s.seed = seed;
  s.region_map.sink_window_width = 5;
  s.region_map.ranges.push_back({RegionTag::SinkWindow, 0, 5});

  // Distinct keys, one fact per context turn.
  check(vocab.n_keys >= n_turns, "gen_multiturn_agentic: key pool too small");
  std::vector<int> key_perm(vocab.n_keys);
  for (int i = 0; i < vocab.n_keys; ++i) key_perm[i] = i;
  for (int i = vocab.n_keys - 1; i > 0; --i)
    std::swap(key_perm[i], key_perm[rng.uniform_index(i + 1)]);

  std::vector<int> fact_key(n_turns), fact_value(n_turns);
  int pos = 0;
  int turn_id = 0;
  for (int c = 0; c < n_turns; ++c) {
    const int ctx_start = pos;
    const int ctx_end = ctx_start + (ctx_total / n_turns) +
                        (c < ctx_total % n_turns ? 1 : 0);
    // markers
    if (c == 0) {
      s.tokens[pos++] = Vocab::kBos;
      s.tokens[pos++] = Vocab::kSys;
    } else {
      s.tokens[pos++] = Vocab::kTool;
    }
    const int query_start = ctx_end - 3;
    for (int i = pos; i < query_start; ++i)
      s.tokens[i] = vocab.filler_id(static_cast<int>(rng.uniform_index(vocab.n_filler)));
    // plant this turn's fact in the filler interior
    fact_key[c] = vocab.key_id(key_perm[c]);
    fact_value[c] = vocab.value_id(static_cast<int>(rng.uniform_index(vocab.n_values)));
    const int lo = pos, hi = query_start - 2;
    check(hi > lo, "gen_multiturn_agentic: turn too small for a fact");
    const int fp = lo + static_cast<int>(rng.uniform_index(hi - lo));
    s.tokens[fp] = fact_key[c];
    s.tokens[fp + 1] = fact_value[c];
    s.needle_positions.push_back(fp);
    s.needle_positions.push_back(fp + 1);
    // query about a fact from this or an earlier context turn
    const int asked = static_cast<int>(rng.uniform_index(c + 1));
    s.tokens[query_start] = Vocab::kQuery;
    s.tokens[query_start + 1] = fact_key[asked];
    s.tokens[query_start + 2] = Vocab::kSep;
    for (int i = ctx_start; i < ctx_end; ++i) s.seg.turn_ids[i] = turn_id;
    if (c == 0) {
      check(ctx_end > 5, "gen_multiturn_agentic: first turn shorter than sink window");
      s.region_map.ranges.push_back({RegionTag::SystemUser, 5, ctx_end});
    } else {
      s.region_map.ranges.push_back({RegionTag::ToolResponse, ctx_start, ctx_end});
    }
    ++turn_id;
    pos = ctx_end;

    // assistant response turn
    const int resp_start = pos;
    s.tokens[pos++] = Vocab::kAssist;
    const int answer_pos = pos;
    s.tokens[pos++] = fact_value[asked];
    s.tokens[pos++] = (c + 1 == n_turns) ? Vocab::kEos : Vocab::kSep;
    for (int i = resp_start; i < pos; ++i) {
      s.seg.labels[i] = TokenLabel::Response;
      s.seg.turn_ids[i] = turn_id;
    }
    s.region_map.ranges.push_back({RegionTag::AssistantResponse, resp_start, pos});
    ++turn_id;
    if (c + 1 == n_turns) s.answer_span = {answer_pos};
  }
  check(pos == seq_len, "gen_multiturn_agentic: layout error");
  s.validate(vocab);
  return s;
}

Splits make_splits(const Vocab& vocab, const TaskSpec& spec, int n_train,
                   int n_eval, uint64_t seed) {
  check(n_train >= 1 && n_eval >= 0, "make_splits: bad sizes");
  check(vocab.n_values >= 4, "make_splits: value pool too small to split");
  Rng rng(seed);

  PairPool train_pool, eval_pool;
  train_pool.allowed_values.resize(vocab.n_keys);
  eval_pool.allowed_values.resize(vocab.n_keys);
  for (int k = 0; k < vocab.n_keys; ++k) {
    std::vector<int> vals(vocab.n_values);
    for (int i = 0; i < vocab.n_values; ++i) vals[i] = vocab.value_id(i);
    for (int i = vocab.n_values - 1; i > 0; --i)
      std::swap(vals[i], vals[rng.uniform_index(i + 1)]);
    const int cut = std::max(2, (vocab.n_values * 3) / 5);
    train_pool.allowed_values[k].assign(vals.begin(), vals.begin() + cut);
    eval_pool.allowed_values[k].assign(vals.begin() + cut, vals.end());
  }
  std::vector<int> keyids(vocab.n_keys);
  for (int i = 0; i < vocab.n_keys; ++i) keyids[i] = vocab.key_id(i);
  for (int i = vocab.n_keys - 1; i > 0; --i)
    std::swap(keyids[i], keyids[rng.uniform_index(i + 1)]);
  const int kcut = std::max(1, (vocab.n_keys * 3) / 5);
  train_pool.answer_keys.assign(keyids.begin(), keyids.begin() + kcut);
  eval_pool.answer_keys.assign(keyids.begin() + kcut, keyids.end());

  auto generate = [&](const PairPool& pool, uint64_t s, double depth) {
    switch (spec.kind) {
      case TaskKind::SingleFact:
        return gen_single_fact(vocab, spec.seq_len, depth, s, &pool);
      case TaskKind::TwoFact:
        return gen_two_fact(vocab, spec.seq_len, s, &pool);
      case TaskKind::MultiValue:
        return gen_multi_value(vocab, spec.seq_len, s, &pool);
      case TaskKind::Aggregation:
        return gen_aggregation(vocab, spec.seq_len, s, &pool);
    }
    fail("make_splits: unknown task kind");
  };

  Splits out;
  for (int i = 0; i < n_train; ++i)
    out.train.push_back(generate(train_pool, mix_seed(seed, i),
                                 Rng(mix_seed(seed ^ 0xABCDULL, i)).uniform()));
  for (int i = 0; i < n_eval; ++i)
    out.eval.push_back(generate(eval_pool, mix_seed(seed ^ 0x5EEDULL, i),
                                Rng(mix_seed(seed ^ 0xF00DULL, i)).uniform()));
  return out;
}

std::optional<std::vector<int>> oracle_answer(const Sample& sample, const Vocab& vocab) {
  const auto& toks = sample.tokens;
  const int t = static_cast<int>(toks.size());
  int query = -1;
  for (int i = 0; i < t; ++i)
    if (toks[i] == Vocab::kQuery && sample.seg.is_context(i)) query = i;
  if (query < 0) return std::nullopt;

  auto in_context = [&](int i) { return i >= 0 && i < t && sample.seg.is_context(i); };

  // Candidate fact heads: key token inside context whose successor is a key
  // or value and whose predecessor is neither (query sites are excluded by
  // the predecessor rule).
  auto find_fact = [&](int symbol) -> std::optional<int> {
    int found = -1;
    for (int p = 0; p + 1 < t; ++p) {
      if (!in_context(p) || !in_context(p + 1)) continue;
      if (toks[p] != symbol) continue;
      const int succ = toks[p + 1];
      if (!vocab.is_key(succ) && !vocab.is_value(succ)) continue;
      if (p > 0 && (vocab.is_key(toks[p - 1]) || toks[p - 1] == Vocab::kQuery)) continue;
      if (found >= 0) return std::nullopt;  // ambiguous
      found = p;
    }
    if (found < 0) return std::nullopt;
    return found;
  };

  switch (sample.kind) {
    case TaskKind::SingleFact:
    case TaskKind::TwoFact: {
      if (query + 1 >= t || !vocab.is_key(toks[query + 1])) return std::nullopt;
      int current = toks[query + 1];
      for (int hop = 0; hop < 4; ++hop) {
        auto p = find_fact(current);
        if (!p) return std::nullopt;
        const int next = toks[*p + 1];
        if (vocab.is_value(next)) return std::vector<int>{next};
        current = next;
      }
      return std::nullopt;
    }
    case TaskKind::MultiValue: {
      if (query + 1 >= t || !vocab.is_key(toks[query + 1])) return std::nullopt;
      const int key = toks[query + 1];
      std::vector<int> values;
      for (int p = 0; p + 1 < t; ++p) {
        if (!in_context(p) || !in_context(p + 1)) continue;
        if (toks[p] != key || !vocab.is_value(toks[p + 1])) continue;
        values.push_back(toks[p + 1]);
      }
      if (values.empty()) return std::nullopt;
      return values;
    }
    case TaskKind::Aggregation: {
      std::vector<int> counts(vocab.n_keys, 0);
      for (int p = 0; p < t; ++p)
        if (in_context(p) && vocab.is_key(toks[p]) && p != query + 1)
          counts[toks[p] - vocab.key_id(0)] += 1;
      int best = -1, best_count = 0;
      bool unique = false;
      for (int k = 0; k < vocab.n_keys; ++k) {
        if (counts[k] > best_count) {
          best = k;
          best_count = counts[k];
          unique = true;
        } else if (counts[k] == best_count && counts[k] > 0) {
          unique = false;
        }
      }
      if (best < 0 || !unique) return std::nullopt;
      return std::vector<int>{vocab.key_id(best)};
    }
  }
  return std::nullopt;
}

// ---- serialization -------------------------------------------------------

namespace {

json sample_to_json(const Sample& s) {
  json j;
  j["tokens"] = s.tokens;
  std::string labels;
  for (int i = 0; i < s.seg.length(); ++i)
    labels.push_back(s.seg.is_context(i) ? 'C' : 'R');
  j["labels"] = labels;
  j["turn_ids"] = s.seg.turn_ids;
  j["answer_span"] = s.answer_span;
  j["needle_positions"] = s.needle_positions;
  j["task_kind"] = task_kind_name(s.kind);
  j["seed"] = s.seed;
  json rm;
  rm["w"] = s.region_map.sink_window_width;
  json ranges = json::array();
  for (const auto& r : s.region_map.ranges)
    ranges.push_back({region_tag_name(r.tag), r.start, r.end});
  rm["ranges"] = ranges;
  j["region_map"] = rm;
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.tokens = j.at("tokens").get<std::vector<int>>();
  const std::string labels = j.at("labels").get<std::string>();
  for (char c : labels) {
    check(c == 'C' || c == 'R', "parse_samples: bad label");
    s.seg.labels.push_back(c == 'C' ? TokenLabel::Context : TokenLabel::Response);
  }
  s.seg.turn_ids = j.at("turn_ids").get<std::vector<int>>();
  s.answer_span = j.at("answer_span").get<std::vector<int>>();
  s.needle_positions = j.at("needle_positions").get<std::vector<int>>();
  s.kind = task_kind_from_name(j.at("task_kind").get<std::string>());
  s.seed = j.at("seed").get<uint64_t>();
  const json& rm = j.at("region_map");
  s.region_map.sink_window_width = rm.at("w").get<int>();
  for (const auto& r : rm.at("ranges")) {
    s.region_map.ranges.push_back({region_tag_from_name(r.at(0).get<std::string>()),
                                   r.at(1).get<int>(), r.at(2).get<int>()});
  }
  return s;
}

}  // namespace

std::string serialize_samples(const std::vector<Sample>& samples) {
  std::ostringstream out;
  for (const Sample& s : samples) out << sample_to_json(s).dump() << '\n';
  return out.str();
}

std::vector<Sample> parse_samples(const std::string& text) {
  std::vector<Sample> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(sample_from_json(json::parse(line)));
  }
  return out;
}

void write_samples(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "write_samples: cannot open " + path);
  out << serialize_samples(samples);
  check(out.good(), "write_samples: write failed");
}

std::vector<Sample> read_samples(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "read_samples: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_samples(buf.str());
}

}  // namespace focusft
