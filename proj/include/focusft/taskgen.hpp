#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "focusft/diagnostics.hpp"
#include "focusft/masking.hpp"

namespace focusft {

// Fixed symbolic vocabulary: specials, role markers, then key / value /
// filler pools. No BPE; tasks measure attention behavior, not linguistics.
struct Vocab {
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kSep = 2;
  static constexpr int kQuery = 3;
  static constexpr int kSys = 4;
  static constexpr int kUser = 5;
  static constexpr int kTool = 6;
  static constexpr int kAssist = 7;
  static constexpr int kSpecials = 8;

  int vocab_size = 64;
  int n_keys = 14;
  int n_values = 14;
  int n_filler = 28;

  static Vocab make(int vocab_size);

  int key_id(int i) const { return kSpecials + i; }
  int value_id(int i) const { return kSpecials + n_keys + i; }
  int filler_id(int i) const { return kSpecials + n_keys + n_values + i; }
  bool is_key(int id) const { return id >= key_id(0) && id < key_id(n_keys); }
  bool is_value(int id) const {
    return id >= value_id(0) && id < value_id(n_values);
  }
  bool is_filler(int id) const {
    return id >= filler_id(0) && id < filler_id(n_filler);
  }
};

enum class TaskKind { SingleFact, TwoFact, MultiValue, Aggregation };

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct Sample {
  std::vector<int> tokens;
  Segmentation seg;
  std::vector<int> answer_span;       // response positions holding gold tokens
  std::vector<int> needle_positions;  // context indices of planted facts
  TaskKind kind = TaskKind::SingleFact;
  uint64_t seed = 0;
  RegionMap region_map;

  void validate(const Vocab& vocab) const;
};

// Restricts which fact pairs a generator may plant; used by make_splits to
// keep train and eval pairs disjoint.
struct PairPool {
  // allowed_values[key index] = value ids usable with that key
  std::vector<std::vector<int>> allowed_values;
  // key ids allowed as aggregation answers
  std::vector<int> answer_keys;
};

Sample gen_single_fact(const Vocab& vocab, int seq_len, double needle_depth,
                       uint64_t seed, const PairPool* pool = nullptr);
Sample gen_two_fact(const Vocab& vocab, int seq_len, uint64_t seed,
                    const PairPool* pool = nullptr);
Sample gen_multi_value(const Vocab& vocab, int seq_len, uint64_t seed,
                       const PairPool* pool = nullptr);
Sample gen_aggregation(const Vocab& vocab, int seq_len, uint64_t seed,
                       const PairPool* pool = nullptr);

// Alternating context turns (system prompt, then tool responses) and
// assistant response turns; each context turn plants a fact and ends with a
// query answered by the following assistant turn, drawing on facts from
// context turns at or before it. n_turns counts assistant turns.
Sample gen_multiturn_agentic(const Vocab& vocab, int seq_len, int n_turns,
                             uint64_t seed);

struct TaskSpec {
  TaskKind kind = TaskKind::SingleFact;
  int seq_len = 256;
  double needle_depth = 0.5;  // SingleFact only; eval varies it per sample
  int n_turns = 5;            // agentic structure knob
};

struct Splits {
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

// Disjoint fact-pair assignment between the splits, so eval measures
// retrieval rather than memorized key->value associations.
Splits make_splits(const Vocab& vocab, const TaskSpec& spec, int n_train,
                   int n_eval, uint64_t seed);

// Independent rule-based scan of the token sequence; nullopt when the answer
// is not derivable (e.g. a planted fact was removed).
std::optional<std::vector<int>> oracle_answer(const Sample& sample, const Vocab& vocab);

// One JSON object per line (tokens, inline labels, turn ids, answer span,
// needle positions, task kind, seed, region map).
std::string serialize_samples(const std::vector<Sample>& samples);
std::vector<Sample> parse_samples(const std::string& text);
void write_samples(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> read_samples(const std::string& path);

}  // namespace focusft
