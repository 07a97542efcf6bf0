#pragma once

#include <functional>
#include <string>
#include <vector>

#include "focusft/fastweights.hpp"
#include "focusft/masking.hpp"
#include "focusft/model.hpp"
#include "focusft/taskgen.hpp"
#include "focusft/tensor.hpp"

namespace focusft {

// The 2x2 of (bilevel, bidirectional-context mask).
enum class TrainMode { StandardSFT, SFTBidir, CausalBilevel, FocuSFT };

std::string mode_name(TrainMode mode);
TrainMode mode_from_name(const std::string& name);
inline bool mode_bilevel(TrainMode m) {
  return m == TrainMode::CausalBilevel || m == TrainMode::FocuSFT;
}
inline bool mode_bidir(TrainMode m) {
  return m == TrainMode::SFTBidir || m == TrainMode::FocuSFT;
}

struct TrainerConfig {
  TrainMode mode = TrainMode::FocuSFT;
  int k_inner = 2;
  double eta_in = 1e-2;
  double inner_clip = 1.0;
  double outer_lr = 3e-4;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  double outer_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 5;
  int grad_accum = 1;  // samples per optimizer step
  uint64_t seed = 1234;
  bool collect_timing = true;  // zeroed timing fields when off (reproducible logs)
  int checkpoint_cadence = 0;  // steps between checkpoints; 0 = final only

  AdapterConfig adapter;

  void validate() const;
};

struct StepReport {
  int step = 0;
  TrainMode mode = TrainMode::StandardSFT;
  std::vector<double> inner_losses;  // K+1 entries when bilevel is on
  double outer_loss = 0.0;
  double grad_norm_inner = 0.0;  // pre-clip, last inner step
  double grad_norm_outer = 0.0;  // pre-clip
  double t_inner_ms = 0.0;
  double t_outer_ms = 0.0;
  double lr = 0.0;

  std::string to_json() const;
};

// Linear warmup to the peak over round(warmup_frac * total) steps, then
// cosine decay to 0. Steps are 1-based.
double cosine_warmup_lr(double peak, int step, int total_steps, double warmup_frac);

struct InnerResult {
  AdapterSet adapters;
  std::vector<double> losses;  // L_inner(phi^(0)) .. (one per executed step;
                               // plus phi^(K) when compute_final_loss)
  double last_grad_norm = 0.0;
};

// K SGD steps on the adapters with theta frozen; gradient clipped at
// inner_clip each step. theta is bitwise unchanged on return.
InnerResult inner_loop(ModelWeights& model, AdapterSet adapters, const Sample& sample,
                       const Tensor& mask, const TrainerConfig& cfg,
                       bool compute_final_loss = true);

// Accumulates d(loss)/d(theta) for one sample with the detached fast weights
// held fixed; returns the loss. Callers clip and apply the optimizer.
double outer_forward_backward(ModelWeights& model, const AdapterSet* adapters,
                              const Sample& sample, const Tensor& mask);

// Single-sample outer update: forward with (theta, phi^(K)), backprop to
// theta only, clip, apply; the adapter set is not touched again.
double outer_step(ModelWeights& model, const AdapterSet* adapters,
                  const Sample& sample, const Tensor& mask,
                  OptimizerState& opt, double lr, double clip,
                  double* pre_clip_norm = nullptr);

struct TrainHooks {
  std::function<void(const StepReport&)> on_step;
  std::function<void(int step, const ModelWeights&)> on_checkpoint;
};

std::vector<StepReport> train(ModelWeights& model, const std::vector<Sample>& data,
                              const TrainerConfig& cfg,
                              const TrainHooks* hooks = nullptr);

struct EvalRecord {
  int sample_index = 0;
  TaskKind kind = TaskKind::SingleFact;
  double needle_depth = 0.0;  // mean needle position / T
  std::vector<int> predicted;
  std::vector<int> gold;
  bool correct = false;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<EvalRecord> records;
};

// Greedy decode of the answer span under the causal mask (inference is
// standard autoregressive decoding); exact match over answer tokens.
EvalResult evaluate(ModelWeights& model, const std::vector<Sample>& data);

struct InferenceAdaptResult {
  bool skipped = false;  // no adaptable pseudo-response available
  std::vector<int> base_predicted;
  std::vector<int> adapted_predicted;
  bool base_correct = false;
  bool adapted_correct = false;
};

// One inner step on the test sample's pseudo-response (response positions
// outside the answer span), then a causal greedy decode with (theta, phi');
// phi' is discarded. The un-adapted decode is reported alongside.
InferenceAdaptResult inference_adapt(ModelWeights& model, const Sample& sample,
                                     int k_steps, double eta_in,
                                     const AdapterConfig& adapter_cfg,
                                     uint64_t seed);

}  // namespace focusft
