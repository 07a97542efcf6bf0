#pragma once

#include <map>
#include <string>
#include <vector>

#include "focusft/bilevel.hpp"
#include "focusft/model.hpp"
#include "focusft/taskgen.hpp"

namespace focusft {

// Full description of one run: architecture, trainer, adapter, task and
// output plumbing. Parsed from a flat key=value file; every run directory
// gets a canonical serialized copy before compute starts.
struct RunConfig {
  ModelConfig model;
  TrainerConfig trainer;
  TaskSpec task;
  int n_train = 200;
  int n_eval = 64;
  int depth_bins = 4;
  int metric_cadence = 1;  // steps between metrics lines
  std::string out_dir = "runs/run";

  void validate() const;
  std::string serialize() const;
};

// Parses `key = value` lines ('#' comments, blank lines allowed). Unknown
// keys and malformed values are errors naming the offending key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Trains per the config, streaming StepReports to <out>/metrics.jsonl,
// checkpointing at the configured cadence plus a final checkpoint, and
// writing <out>/summary.json. Returns the run directory.
std::string cmd_train(const RunConfig& config);

// Greedy-decode exact match over a sample file; writes predictions.jsonl and
// eval_report.json (overall, per-task-kind and per-needle-depth-bin rows).
double cmd_eval(const std::string& checkpoint_dir, const std::string& samples_path,
                const std::string& out_dir, int depth_bins);

// Traced forward over the first sample under both the causal and
// bidirectional-context masks; emits summary JSON, sink/profile curves and a
// mid-layer heatmap pair per mask.
void cmd_analyze(const std::string& checkpoint_dir, const std::string& samples_path,
                 const std::string& out_dir);

struct SweepRow {
  double value = 0.0;
  double accuracy = 0.0;
  double final_loss = 0.0;
  std::string run_dir;
};

// One full train+eval per value of the swept axis (layer_fraction, k_inner
// or eta_in), sharing the base seed; emits sweep.csv and sweep.svg.
std::vector<SweepRow> cmd_sweep(const RunConfig& base, const std::string& axis,
                                const std::vector<double>& values,
                                const std::string& out_dir);

}  // namespace focusft
