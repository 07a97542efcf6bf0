#include "focusft/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "focusft/diagnostics.hpp"
#include "focusft/plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace focusft {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open file: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write file: " + path);
  out << text;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

struct KvParser {
  std::map<std::string, std::string> kv;
  std::set<std::string> consumed;

  double num(const std::string& key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    try {
      std::size_t used = 0;
      double v = std::stod(it->second, &used);
      check(used == it->second.size(), "config: bad numeric value for '" + key +
                                           "': " + it->second);
      return v;
    } catch (const TensorError&) {
      throw;
    } catch (const std::exception&) {
      fail("config: bad numeric value for '" + key + "': " + it->second);
    }
  }

  int integer(const std::string& key, int fallback) {
    double v = num(key, fallback);
    check(v == std::floor(v), "config: '" + key + "' must be an integer");
    return static_cast<int>(v);
  }

  uint64_t seed(const std::string& key, uint64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      fail("config: bad seed value for '" + key + "': " + it->second);
    }
  }

  bool flag(const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    fail("config: '" + key + "' must be true or false, got: " + it->second);
  }

  std::string str(const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    return it->second;
  }
};

std::vector<int> depth_bin_edges_counts(const std::vector<EvalRecord>& records,
                                        int bins, std::vector<int>& correct) {
  std::vector<int> total(bins, 0);
  correct.assign(bins, 0);
  for (const EvalRecord& r : records) {
    int b = std::min(bins - 1, static_cast<int>(r.needle_depth * bins));
    if (b < 0) b = 0;
    total[b] += 1;
    if (r.correct) correct[b] += 1;
  }
  return total;
}

void write_eval_report(const EvalResult& result, const std::vector<Sample>& samples,
                       const std::string& out_dir, int depth_bins) {
  fs::create_directories(out_dir);

  std::ofstream pred(fs::path(out_dir) / "predictions.jsonl");
  check(pred.good(), "cannot write predictions file");
  for (const EvalRecord& r : result.records) {
    json line = {{"sample_index", r.sample_index},
                 {"task_kind", task_kind_name(r.kind)},
                 {"needle_depth", r.needle_depth},
                 {"predicted", r.predicted},
                 {"gold", r.gold},
                 {"correct", r.correct}};
    pred << line.dump() << "\n";
  }
  pred.close();

  json report;
  report["accuracy"] = result.accuracy;
  report["n_samples"] = result.records.size();

  std::map<std::string, std::pair<int, int>> by_kind;  // kind -> (correct, total)
  for (const EvalRecord& r : result.records) {
    auto& cell = by_kind[task_kind_name(r.kind)];
    cell.second += 1;
    if (r.correct) cell.first += 1;
  }
  json kinds = json::object();
  for (const auto& [name, cell] : by_kind)
    kinds[name] = {{"correct", cell.first},
                   {"total", cell.second},
                   {"accuracy", static_cast<double>(cell.first) / cell.second}};
  report["by_task_kind"] = kinds;

  std::vector<int> bin_correct;
  std::vector<int> bin_total =
      depth_bin_edges_counts(result.records, depth_bins, bin_correct);
  json bins = json::array();
  for (int b = 0; b < depth_bins; ++b) {
    json row = {{"depth_lo", static_cast<double>(b) / depth_bins},
                {"depth_hi", static_cast<double>(b + 1) / depth_bins},
                {"correct", bin_correct[b]},
                {"total", bin_total[b]}};
    row["accuracy"] = bin_total[b] ? static_cast<double>(bin_correct[b]) / bin_total[b]
                                   : 0.0;
    bins.push_back(row);
  }
  report["by_needle_depth"] = bins;
  (void)samples;
  write_file((fs::path(out_dir) / "eval_report.json").string(), report.dump(2) + "\n");
}

void analyze_one_mask(ModelWeights& model, const Sample& sample, const Tensor& mask,
                      const std::string& tag, const std::string& out_dir,
                      json& combined) {
  AttentionTrace trace;
  trace.enabled = true;
  {
    NoGradGuard no_grad;
    forward(model, sample.tokens, mask, nullptr, &trace);
  }
  AttentionSummary summary = summarize(trace, sample.seg, sample.region_map,
                                       sample.region_map.sink_window_width);
  combined[tag] = json::parse(summary.to_json());

  fs::path dir(out_dir);
  write_file((dir / (tag + "_summary.json")).string(), summary.to_json() + "\n");

  // Sink-mass-per-layer curve.
  std::vector<double> xs;
  for (int l = 0; l < summary.layer_count; ++l) xs.push_back(l);
  svg_line_plot(xs, {{"sink_mass", summary.sink_mass_per_layer}}, "layer",
                "sink mass", (dir / (tag + "_sink_per_layer.svg")).string());
  std::ostringstream sink_csv;
  sink_csv << "layer,sink_mass\n";
  for (int l = 0; l < summary.layer_count; ++l)
    sink_csv << l << "," << fmt(summary.sink_mass_per_layer[l]) << "\n";
  write_file((dir / (tag + "_sink_per_layer.csv")).string(), sink_csv.str());

  // Region budget bars (as CSV; fractions sum to 1).
  std::ostringstream budget_csv;
  budget_csv << "region,share\n";
  for (const auto& [name, share] : summary.region_budget)
    budget_csv << name << "," << fmt(share) << "\n";
  write_file((dir / (tag + "_region_budget.csv")).string(), budget_csv.str());

  // Positional profile.
  std::vector<double> pxs;
  for (std::size_t j = 0; j < summary.positional_profile.size(); ++j)
    pxs.push_back(static_cast<double>(j));
  svg_line_plot(pxs, {{"attention", summary.positional_profile}}, "key position",
                "mean attention", (dir / (tag + "_positional_profile.svg")).string());
  std::ostringstream prof_csv;
  prof_csv << "position,mean_attention\n";
  for (std::size_t j = 0; j < summary.positional_profile.size(); ++j)
    prof_csv << j << "," << fmt(summary.positional_profile[j]) << "\n";
  write_file((dir / (tag + "_positional_profile.csv")).string(), prof_csv.str());

  // Mid-layer heatmap.
  const int mid = model.config.n_layers / 2;
  heatmap_export(trace, mid, (dir / (tag + "_heatmap.csv")).string(),
                 (dir / (tag + "_heatmap.svg")).string(), &sample.region_map);
}

void apply_axis(RunConfig& cfg, const std::string& axis, double value) {
  if (axis == "layer_fraction") {
    cfg.trainer.adapter.layer_fraction = value;
  } else if (axis == "K" || axis == "k_inner") {
    check(value == std::floor(value) && value >= 0, "sweep: K must be a non-negative integer");
    cfg.trainer.k_inner = static_cast<int>(value);
  } else if (axis == "eta_in") {
    cfg.trainer.eta_in = value;
  } else {
    fail("sweep: unknown axis '" + axis +
         "' (expected layer_fraction, K or eta_in)");
  }
}

std::string axis_dir_name(const std::string& axis, double value) {
  std::ostringstream name;
  name << axis << "_" << value;
  std::string s = name.str();
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  trainer.validate();
  trainer.adapter.validate(model);
  check(task.seq_len >= 16, "config: seq_len too small (need >= 16)");
  check(task.seq_len <= model.max_seq_len,
        "config: seq_len exceeds model max_seq_len");
  check(task.needle_depth >= 0.0 && task.needle_depth <= 1.0,
        "config: needle_depth must lie in [0, 1]");
  check(task.n_turns >= 1, "config: n_turns must be >= 1");
  check(n_train >= 1, "config: n_train must be >= 1");
  check(n_eval >= 1, "config: n_eval must be >= 1");
  check(depth_bins >= 1, "config: depth_bins must be >= 1");
  check(metric_cadence >= 1, "config: metric_cadence must be >= 1");
  check(!out_dir.empty(), "config: out_dir must be set");
  check(model.vocab_size >= Vocab::kSpecials + 12,
        "config: vocab_size too small for the task vocabulary");
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << "# model\n";
  out << "n_layers = " << model.n_layers << "\n";
  out << "n_heads = " << model.n_heads << "\n";
  out << "d_model = " << model.d_model << "\n";
  out << "d_ff = " << model.d_ff << "\n";
  out << "vocab_size = " << model.vocab_size << "\n";
  out << "max_seq_len = " << model.max_seq_len << "\n";
  out << "rope_base = " << fmt(model.rope_base) << "\n";
  out << "\n# trainer\n";
  out << "mode = " << mode_name(trainer.mode) << "\n";
  out << "k_inner = " << trainer.k_inner << "\n";
  out << "eta_in = " << fmt(trainer.eta_in) << "\n";
  out << "inner_clip = " << fmt(trainer.inner_clip) << "\n";
  out << "outer_lr = " << fmt(trainer.outer_lr) << "\n";
  out << "warmup_frac = " << fmt(trainer.warmup_frac) << "\n";
  out << "weight_decay = " << fmt(trainer.weight_decay) << "\n";
  out << "outer_clip = " << fmt(trainer.outer_clip) << "\n";
  out << "beta1 = " << fmt(trainer.beta1) << "\n";
  out << "beta2 = " << fmt(trainer.beta2) << "\n";
  out << "epochs = " << trainer.epochs << "\n";
  out << "grad_accum = " << trainer.grad_accum << "\n";
  out << "seed = " << trainer.seed << "\n";
  out << "collect_timing = " << (trainer.collect_timing ? "true" : "false") << "\n";
  out << "checkpoint_cadence = " << trainer.checkpoint_cadence << "\n";
  out << "\n# fast weights\n";
  out << "rank = " << trainer.adapter.rank << "\n";
  out << "alpha = " << fmt(trainer.adapter.alpha) << "\n";
  out << "layer_fraction = " << fmt(trainer.adapter.layer_fraction) << "\n";
  out << "\n# task\n";
  out << "task_kind = " << task_kind_name(task.kind) << "\n";
  out << "seq_len = " << task.seq_len << "\n";
  out << "needle_depth = " << fmt(task.needle_depth) << "\n";
  out << "n_turns = " << task.n_turns << "\n";
  out << "n_train = " << n_train << "\n";
  out << "n_eval = " << n_eval << "\n";
  out << "\n# outputs\n";
  out << "depth_bins = " << depth_bins << "\n";
  out << "metric_cadence = " << metric_cadence << "\n";
  out << "out_dir = " << out_dir << "\n";
  return out.str();
}

RunConfig parse_run_config(const std::string& text) {
  KvParser p;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    check(eq != std::string::npos,
          "config: line " + std::to_string(line_no) + " is not 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    check(!key.empty() && !value.empty(),
          "config: line " + std::to_string(line_no) + " has an empty key or value");
    check(!p.kv.count(key), "config: duplicate key '" + key + "'");
    p.kv[key] = value;
  }

  RunConfig cfg;
  cfg.model.n_layers = p.integer("n_layers", cfg.model.n_layers);
  cfg.model.n_heads = p.integer("n_heads", cfg.model.n_heads);
  cfg.model.d_model = p.integer("d_model", cfg.model.d_model);
  cfg.model.d_ff = p.integer("d_ff", cfg.model.d_ff);
  cfg.model.vocab_size = p.integer("vocab_size", cfg.model.vocab_size);
  cfg.model.max_seq_len = p.integer("max_seq_len", cfg.model.max_seq_len);
  cfg.model.rope_base = p.num("rope_base", cfg.model.rope_base);

  cfg.trainer.mode = mode_from_name(p.str("mode", mode_name(cfg.trainer.mode)));
  cfg.trainer.k_inner = p.integer("k_inner", cfg.trainer.k_inner);
  cfg.trainer.eta_in = p.num("eta_in", cfg.trainer.eta_in);
  cfg.trainer.inner_clip = p.num("inner_clip", cfg.trainer.inner_clip);
  cfg.trainer.outer_lr = p.num("outer_lr", cfg.trainer.outer_lr);
  cfg.trainer.warmup_frac = p.num("warmup_frac", cfg.trainer.warmup_frac);
  cfg.trainer.weight_decay = p.num("weight_decay", cfg.trainer.weight_decay);
  cfg.trainer.outer_clip = p.num("outer_clip", cfg.trainer.outer_clip);
  cfg.trainer.beta1 = p.num("beta1", cfg.trainer.beta1);
  cfg.trainer.beta2 = p.num("beta2", cfg.trainer.beta2);
  cfg.trainer.epochs = p.integer("epochs", cfg.trainer.epochs);
  cfg.trainer.grad_accum = p.integer("grad_accum", cfg.trainer.grad_accum);
  cfg.trainer.seed = p.seed("seed", cfg.trainer.seed);
  cfg.model.seed = cfg.trainer.seed;
  cfg.trainer.collect_timing = p.flag("collect_timing", cfg.trainer.collect_timing);
  cfg.trainer.checkpoint_cadence =
      p.integer("checkpoint_cadence", cfg.trainer.checkpoint_cadence);

  cfg.trainer.adapter.rank = p.integer("rank", cfg.trainer.adapter.rank);
  cfg.trainer.adapter.alpha = p.num("alpha", cfg.trainer.adapter.alpha);
  cfg.trainer.adapter.layer_fraction =
      p.num("layer_fraction", cfg.trainer.adapter.layer_fraction);

  cfg.task.kind = task_kind_from_name(p.str("task_kind", task_kind_name(cfg.task.kind)));
  cfg.task.seq_len = p.integer("seq_len", cfg.task.seq_len);
  cfg.task.needle_depth = p.num("needle_depth", cfg.task.needle_depth);
  cfg.task.n_turns = p.integer("n_turns", cfg.task.n_turns);
  cfg.n_train = p.integer("n_train", cfg.n_train);
  cfg.n_eval = p.integer("n_eval", cfg.n_eval);
  cfg.depth_bins = p.integer("depth_bins", cfg.depth_bins);
  cfg.metric_cadence = p.integer("metric_cadence", cfg.metric_cadence);
  cfg.out_dir = p.str("out_dir", cfg.out_dir);

  for (const auto& [key, value] : p.kv)
    check(p.consumed.count(key) != 0, "config: unknown key '" + key + "'");

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path));
}

std::string cmd_train(const RunConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  write_file((fs::path(config.out_dir) / "config.cfg").string(), config.serialize());

  const Vocab vocab = Vocab::make(config.model.vocab_size);
  const Splits splits =
      make_splits(vocab, config.task, config.n_train, config.n_eval,
                  config.trainer.seed);

  ModelWeights model = init_model(config.model);

  std::ofstream metrics(fs::path(config.out_dir) / "metrics.jsonl");
  check(metrics.good(), "cannot write metrics file");
  const auto t0 = std::chrono::steady_clock::now();

  TrainHooks hooks;
  hooks.on_step = [&](const StepReport& r) {
    if (r.step % config.metric_cadence == 0) metrics << r.to_json() << "\n";
  };
  hooks.on_checkpoint = [&](int step, const ModelWeights& w) {
    save_checkpoint(w, (fs::path(config.out_dir) /
                        ("checkpoint_" + std::to_string(step)))
                           .string());
  };
  std::vector<StepReport> reports = train(model, splits.train, config.trainer, &hooks);
  metrics.close();

  const std::string final_dir = (fs::path(config.out_dir) / "checkpoint_final").string();
  save_checkpoint(model, final_dir);

  write_samples(splits.eval,
                (fs::path(config.out_dir) / "eval_samples.jsonl").string());
  EvalResult eval = evaluate(model, splits.eval);
  write_eval_report(eval, splits.eval, config.out_dir, config.depth_bins);

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json summary;
  summary["mode"] = mode_name(config.trainer.mode);
  summary["steps"] = reports.size();
  summary["first_outer_loss"] = reports.empty() ? 0.0 : reports.front().outer_loss;
  summary["final_outer_loss"] = reports.empty() ? 0.0 : reports.back().outer_loss;
  summary["eval_accuracy"] = eval.accuracy;
  summary["train_seconds"] = config.trainer.collect_timing ? seconds : 0.0;
  summary["final_checkpoint"] = final_dir;
  write_file((fs::path(config.out_dir) / "summary.json").string(),
             summary.dump(2) + "\n");
  return config.out_dir;
}

double cmd_eval(const std::string& checkpoint_dir, const std::string& samples_path,
                const std::string& out_dir, int depth_bins) {
  ModelWeights model = load_checkpoint(checkpoint_dir);
  std::vector<Sample> samples = read_samples(samples_path);
  check(!samples.empty(), "eval: sample file is empty");
  EvalResult result = evaluate(model, samples);
  write_eval_report(result, samples, out_dir, depth_bins);
  return result.accuracy;
}

void cmd_analyze(const std::string& checkpoint_dir, const std::string& samples_path,
                 const std::string& out_dir) {
  ModelWeights model = load_checkpoint(checkpoint_dir);
  std::vector<Sample> samples = read_samples(samples_path);
  check(!samples.empty(), "analyze: sample file is empty");
  const Sample& sample = samples.front();
  sample.seg.validate();
  sample.region_map.validate(static_cast<int>(sample.tokens.size()));

  fs::create_directories(out_dir);
  json combined;
  analyze_one_mask(model, sample, build_causal_mask(static_cast<int>(sample.tokens.size())),
                   "causal", out_dir, combined);
  analyze_one_mask(model, sample, build_focusft_mask(sample.seg), "bidir_context",
                   out_dir, combined);
  write_file((fs::path(out_dir) / "analysis.json").string(), combined.dump(2) + "\n");
}

std::vector<SweepRow> cmd_sweep(const RunConfig& base, const std::string& axis,
                                const std::vector<double>& values,
                                const std::string& out_dir) {
  check(!values.empty(), "sweep: no values given");
  fs::create_directories(out_dir);

  std::vector<SweepRow> rows;
  for (double value : values) {
    RunConfig cfg = base;
    apply_axis(cfg, axis, value);
    cfg.out_dir = (fs::path(out_dir) / axis_dir_name(axis, value)).string();
    cfg.validate();
    SweepRow row;
    row.value = value;
    row.run_dir = cmd_train(cfg);
    json summary = json::parse(read_file((fs::path(row.run_dir) / "summary.json").string()));
    row.accuracy = summary["eval_accuracy"].get<double>();
    row.final_loss = summary["final_outer_loss"].get<double>();
    rows.push_back(row);
  }

  std::ostringstream csv;
  csv << axis << ",accuracy,final_loss,run_dir\n";
  for (const SweepRow& r : rows)
    csv << fmt(r.value) << "," << fmt(r.accuracy) << "," << fmt(r.final_loss) << ","
        << r.run_dir << "\n";
  write_file((fs::path(out_dir) / "sweep.csv").string(), csv.str());

  std::vector<double> xs, accs;
  for (const SweepRow& r : rows) {
    xs.push_back(r.value);
    accs.push_back(r.accuracy);
  }
  svg_line_plot(xs, {{"accuracy", accs}}, axis, "eval accuracy",
                (fs::path(out_dir) / "sweep.svg").string());
  return rows;
}

}  // namespace focusft
