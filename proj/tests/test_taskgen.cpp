#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "focusft/rng.hpp"
#include "focusft/taskgen.hpp"

using namespace focusft;

namespace {

const Vocab kVocab = Vocab::make(64);

std::vector<int> gold_tokens(const Sample& s) {
  std::vector<int> out;
  for (int pos : s.answer_span) out.push_back(s.tokens[pos]);
  return out;
}

Sample generate(TaskKind kind, int t, uint64_t seed, double depth = 0.5) {
  switch (kind) {
    case TaskKind::SingleFact: return gen_single_fact(kVocab, t, depth, seed);
    case TaskKind::TwoFact: return gen_two_fact(kVocab, t, seed);
    case TaskKind::MultiValue: return gen_multi_value(kVocab, t, seed);
    case TaskKind::Aggregation: return gen_aggregation(kVocab, t, seed);
  }
  throw TensorError("unreachable task kind");
}

}  // namespace

TEST_CASE("vocab layout: unique ids inside the configured size") {
  std::set<int> ids;
  for (int i = 0; i < Vocab::kSpecials; ++i) ids.insert(i);
  for (int i = 0; i < kVocab.n_keys; ++i) ids.insert(kVocab.key_id(i));
  for (int i = 0; i < kVocab.n_values; ++i) ids.insert(kVocab.value_id(i));
  for (int i = 0; i < kVocab.n_filler; ++i) ids.insert(kVocab.filler_id(i));
  CHECK(ids.size() ==
        static_cast<std::size_t>(Vocab::kSpecials + kVocab.n_keys +
                                 kVocab.n_values + kVocab.n_filler));
  CHECK(*ids.rbegin() < kVocab.vocab_size);
  CHECK(kVocab.is_key(kVocab.key_id(0)));
  CHECK_FALSE(kVocab.is_key(kVocab.value_id(0)));
  CHECK(kVocab.is_filler(kVocab.filler_id(kVocab.n_filler - 1)));
}

TEST_CASE("task kind names round trip") {
  for (TaskKind k : {TaskKind::SingleFact, TaskKind::TwoFact, TaskKind::MultiValue,
                     TaskKind::Aggregation})
    CHECK(task_kind_from_name(task_kind_name(k)) == k);
  CHECK_THROWS_AS(task_kind_from_name("bogus"), TensorError);
}

TEST_CASE("single fact: placement depth, determinism, validation") {
  Sample s = gen_single_fact(kVocab, 256, 0.5, 42);
  s.validate(kVocab);
  s.seg.validate();
  CHECK(s.kind == TaskKind::SingleFact);
  REQUIRE_FALSE(s.needle_positions.empty());
  const double rel = static_cast<double>(s.needle_positions.front()) / 256.0;
  CHECK(std::abs(rel - 0.5) < 0.1);

  // Needles live in context, answers in the response.
  for (int p : s.needle_positions) CHECK(s.seg.is_context(p));
  for (int p : s.answer_span) CHECK(s.seg.is_response(p));

  Sample again = gen_single_fact(kVocab, 256, 0.5, 42);
  CHECK(again.tokens == s.tokens);
  CHECK(again.answer_span == s.answer_span);

  Sample other = gen_single_fact(kVocab, 256, 0.5, 43);
  CHECK(other.tokens != s.tokens);

  CHECK_THROWS_AS(gen_single_fact(kVocab, 4, 0.5, 42), TensorError);
}

TEST_CASE("single fact: depth knob sweeps the needle across the context") {
  Sample shallow = gen_single_fact(kVocab, 256, 0.05, 7);
  Sample deep = gen_single_fact(kVocab, 256, 0.95, 7);
  CHECK(shallow.needle_positions.front() < 40);
  CHECK(deep.needle_positions.front() > 150);
}

TEST_CASE("two facts land in distinct turns and both are required") {
  Sample s = gen_two_fact(kVocab, 192, 71);
  s.validate(kVocab);
  REQUIRE(s.needle_positions.size() == 4);  // two key/value pairs
  CHECK(s.seg.turn_ids[s.needle_positions[0]] !=
        s.seg.turn_ids[s.needle_positions[2]]);

  std::optional<std::vector<int>> full = oracle_answer(s, kVocab);
  REQUIRE(full.has_value());
  CHECK(*full == gold_tokens(s));

  // Ablate either fact: the oracle can no longer derive the answer.
  for (int which : {0, 2}) {
    Sample ablated = s;
    const int p = s.needle_positions[which];
    // Overwrite the fact's key symbol with filler, severing the chain.
    ablated.tokens[p] = kVocab.filler_id(0);
    CHECK_FALSE(oracle_answer(ablated, kVocab).has_value());
  }
}

TEST_CASE("multi-value answers have two tokens in mention order") {
  Sample s = gen_multi_value(kVocab, 192, 88);
  s.validate(kVocab);
  REQUIRE(s.answer_span.size() == 2);
  std::optional<std::vector<int>> answer = oracle_answer(s, kVocab);
  REQUIRE(answer.has_value());
  CHECK(*answer == gold_tokens(s));
  CHECK((*answer)[0] != (*answer)[1]);
}

TEST_CASE("aggregation gold is the strictly most frequent key") {
  Sample s = gen_aggregation(kVocab, 192, 99);
  s.validate(kVocab);
  std::optional<std::vector<int>> answer = oracle_answer(s, kVocab);
  REQUIRE(answer.has_value());
  CHECK(*answer == gold_tokens(s));
  REQUIRE(answer->size() == 1);
  CHECK(kVocab.is_key((*answer)[0]));
}

TEST_CASE("multiturn agentic structure") {
  Sample s = gen_multiturn_agentic(kVocab, 320, 5, 123);
  s.validate(kVocab);
  s.seg.validate();

  // Assistant turns are response, everything else context; turns alternate.
  std::set<int> response_turns, context_turns;
  for (int i = 0; i < s.seg.length(); ++i) {
    if (s.seg.is_response(i))
      response_turns.insert(s.seg.turn_ids[i]);
    else
      context_turns.insert(s.seg.turn_ids[i]);
  }
  CHECK(response_turns.size() == 5);
  CHECK(context_turns.size() == 5);
  for (int turn : response_turns) CHECK(context_turns.count(turn) == 0);

  // The region map partitions [0, T) exactly.
  CHECK(s.region_map.covers_exactly(s.seg.length()));

  // Every assistant answer is derivable from facts in earlier context turns.
  std::optional<std::vector<int>> answer = oracle_answer(s, kVocab);
  REQUIRE(answer.has_value());
  CHECK(*answer == gold_tokens(s));

  CHECK_THROWS_AS(gen_multiturn_agentic(kVocab, 320, 1, 123), TensorError);
}

TEST_CASE("region maps partition every generated sample") {
  Rng rng(130);
  for (int i = 0; i < 25; ++i) {
    TaskKind kind = static_cast<TaskKind>(rng.uniform_index(4));
    Sample s = generate(kind, 160, 2000 + i);
    s.region_map.validate(s.seg.length());
    CHECK(s.region_map.covers_exactly(s.seg.length()));
  }
}

TEST_CASE("oracle agrees with stored gold on 10000 seeded samples") {
  int checked = 0;
  for (uint64_t seed = 0; seed < 2500; ++seed) {
    for (TaskKind kind : {TaskKind::SingleFact, TaskKind::TwoFact,
                          TaskKind::MultiValue, TaskKind::Aggregation}) {
      const double depth = 0.05 + 0.9 * static_cast<double>(seed % 100) / 100.0;
      Sample s = generate(kind, 128, seed, depth);
      std::optional<std::vector<int>> answer = oracle_answer(s, kVocab);
      REQUIRE(answer.has_value());
      REQUIRE(*answer == gold_tokens(s));
      ++checked;
    }
  }
  CHECK(checked == 10000);
}

TEST_CASE("splits: disjoint fact pairs, exact sizes, determinism") {
  TaskSpec spec;
  spec.kind = TaskKind::SingleFact;
  spec.seq_len = 128;
  Splits splits = make_splits(kVocab, spec, 40, 20, 11);
  CHECK(splits.train.size() == 40);
  CHECK(splits.eval.size() == 20);

  auto fact_pairs = [&](const std::vector<Sample>& set) {
    std::set<std::pair<int, int>> pairs;
    for (const Sample& s : set) {
      // Scan planted facts: key symbol followed by its value.
      for (int p : s.needle_positions)
        if (kVocab.is_key(s.tokens[p]) && kVocab.is_value(s.tokens[p + 1]))
          pairs.insert({s.tokens[p], s.tokens[p + 1]});
    }
    return pairs;
  };
  std::set<std::pair<int, int>> train_pairs = fact_pairs(splits.train);
  std::set<std::pair<int, int>> eval_pairs = fact_pairs(splits.eval);
  CHECK_FALSE(train_pairs.empty());
  CHECK_FALSE(eval_pairs.empty());
  for (const auto& pair : eval_pairs) CHECK(train_pairs.count(pair) == 0);

  Splits again = make_splits(kVocab, spec, 40, 20, 11);
  CHECK(again.train[0].tokens == splits.train[0].tokens);
  CHECK(again.eval[7].tokens == splits.eval[7].tokens);

  // Eval varies needle depth per sample (the U-shape probe needs coverage).
  std::set<int> depth_bins;
  for (const Sample& s : splits.eval)
    depth_bins.insert(static_cast<int>(4.0 * s.needle_positions.front() /
                                       s.tokens.size()));
  CHECK(depth_bins.size() >= 2);
}

TEST_CASE("constant predictor scores at 1/|value pool| on eval") {
  TaskSpec spec;
  spec.kind = TaskKind::SingleFact;
  spec.seq_len = 128;
  Splits splits = make_splits(kVocab, spec, 10, 400, 17);
  int hits = 0;
  const int guess = kVocab.value_id(3);
  for (const Sample& s : splits.eval)
    if (gold_tokens(s) == std::vector<int>{guess}) ++hits;
  const double acc = static_cast<double>(hits) / 400.0;
  const double chance = 1.0 / kVocab.n_values;
  CHECK(std::abs(acc - chance) < 4.0 * std::sqrt(chance * (1 - chance) / 400.0));
}

TEST_CASE("sample serialization round trips") {
  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i)
    samples.push_back(generate(static_cast<TaskKind>(i), 144, 300 + i));
  std::string text = serialize_samples(samples);
  std::vector<Sample> parsed = parse_samples(text);
  REQUIRE(parsed.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(parsed[i].tokens == samples[i].tokens);
    CHECK(parsed[i].seg.labels == samples[i].seg.labels);
    CHECK(parsed[i].seg.turn_ids == samples[i].seg.turn_ids);
    CHECK(parsed[i].answer_span == samples[i].answer_span);
    CHECK(parsed[i].needle_positions == samples[i].needle_positions);
    CHECK(parsed[i].kind == samples[i].kind);
    CHECK(parsed[i].seed == samples[i].seed);
    CHECK(parsed[i].region_map.ranges.size() == samples[i].region_map.ranges.size());
    parsed[i].validate(kVocab);
  }

  const std::string path = "test_taskgen_roundtrip.jsonl";
  write_samples(samples, path);
  std::vector<Sample> from_disk = read_samples(path);
  REQUIRE(from_disk.size() == samples.size());
  CHECK(from_disk[2].tokens == samples[2].tokens);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_samples("not json\n"), std::exception);
}
