#include "focusft/bilevel.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "focusft/rng.hpp"

namespace focusft {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void check_finite_loss(double loss, const char* where) {
  if (!std::isfinite(loss))
    throw NumericalAbort(std::string(where) + ": non-finite loss, step aborted");
}

Tensor mask_for_mode(TrainMode mode, const Segmentation& seg) {
  return mode_bidir(mode) ? build_focusft_mask(seg)
                          : build_causal_mask(seg.length());
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::StandardSFT: return "standard_sft";
    case TrainMode::SFTBidir: return "sft_bidir";
    case TrainMode::CausalBilevel: return "causal_bilevel";
    case TrainMode::FocuSFT: return "focusft";
  }
  fail("mode_name: unknown mode");
}

TrainMode mode_from_name(const std::string& name) {
  if (name == "standard_sft") return TrainMode::StandardSFT;
  if (name == "sft_bidir") return TrainMode::SFTBidir;
  if (name == "causal_bilevel") return TrainMode::CausalBilevel;
  if (name == "focusft") return TrainMode::FocuSFT;
  fail("mode_from_name: unknown mode: " + name);
}

void TrainerConfig::validate() const {
  check(k_inner >= 0, "TrainerConfig: k_inner must be >= 0");
  check(eta_in >= 0.0, "TrainerConfig: eta_in must be >= 0");
  check(inner_clip > 0.0, "TrainerConfig: inner_clip must be > 0");
  check(outer_lr > 0.0, "TrainerConfig: outer_lr must be > 0");
  check(warmup_frac >= 0.0 && warmup_frac < 1.0, "TrainerConfig: warmup_frac in [0,1)");
  check(outer_clip > 0.0, "TrainerConfig: outer_clip must be > 0");
  check(epochs >= 1, "TrainerConfig: epochs must be >= 1");
  check(grad_accum >= 1, "TrainerConfig: grad_accum must be >= 1");
}

std::string StepReport::to_json() const {
  std::ostringstream out;
  out << "{\"step\":" << step;
  out << ",\"mode\":\"" << mode_name(mode) << "\"";
  out << ",\"inner_losses\":[";
  for (std::size_t i = 0; i < inner_losses.size(); ++i)
    out << (i ? "," : "") << format_double(inner_losses[i]);
  out << "],\"outer_loss\":" << format_double(outer_loss);
  out << ",\"grad_norm_inner\":" << format_double(grad_norm_inner);
  out << ",\"grad_norm_outer\":" << format_double(grad_norm_outer);
  out << ",\"t_inner_ms\":" << format_double(t_inner_ms);
  out << ",\"t_outer_ms\":" << format_double(t_outer_ms);
  out << ",\"lr\":" << format_double(lr) << "}";
  return out.str();
}

double cosine_warmup_lr(double peak, int step, int total_steps, double warmup_frac) {
  check(step >= 1 && step <= total_steps, "cosine_warmup_lr: step out of range");
  const int warmup = static_cast<int>(std::lround(warmup_frac * total_steps));
  if (step <= warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return peak;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

InnerResult inner_loop(ModelWeights& model, AdapterSet adapters, const Sample& sample,
                       const Tensor& mask, const TrainerConfig& cfg,
                       bool compute_final_loss) {
  const std::vector<int> response = sample.seg.response_positions();
  InnerResult result;

  model.set_requires_grad(false);
  adapters.set_requires_grad(true);
  std::vector<Tensor*> phi = adapters.parameters();
  for (int k = 0; k < cfg.k_inner; ++k) {
    Tape tape;
    Tensor logits = forward(model, sample.tokens, mask, &adapters);
    Tensor loss = response_cross_entropy(logits, sample.tokens, response);
    check_finite_loss(loss.item(), "inner_loop");
    result.losses.push_back(loss.item());
    tape.backward(loss);
    result.last_grad_norm = clip_grad_norm(phi, cfg.inner_clip);
    for (Tensor* p : phi) {
      double* w = p->values().data();
      const double* g = p->grads().data();
      const std::size_t n = p->numel();
      for (std::size_t i = 0; i < n; ++i) w[i] -= cfg.eta_in * g[i];
      p->zero_grad();
    }
  }
  if (compute_final_loss) {
    NoGradGuard no_grad;
    Tensor logits = forward(model, sample.tokens, mask, &adapters);
    Tensor loss = response_cross_entropy(logits, sample.tokens, response);
    check_finite_loss(loss.item(), "inner_loop");
    result.losses.push_back(loss.item());
  }
  model.set_requires_grad(true);
  result.adapters = std::move(adapters);
  return result;
}

double outer_forward_backward(ModelWeights& model, const AdapterSet* adapters,
                              const Sample& sample, const Tensor& mask) {
  if (adapters) {
    // First-order contract: phi^(K) enters the outer pass as detached
    // constants with no surviving tape linkage.
    for (const auto& layer : adapters->adapters) {
      for (const Adapter& ad : layer) {
        check(!ad.a.requires_grad && !ad.b.requires_grad &&
                  ad.a.tape_id == -1 && ad.b.tape_id == -1,
              "outer step: adapters must be detached");
      }
    }
  }
  Tape tape;
  Tensor logits = forward(model, sample.tokens, mask, adapters);
  Tensor loss = response_cross_entropy(logits, sample.tokens,
                                       sample.seg.response_positions());
  check_finite_loss(loss.item(), "outer_step");
  tape.backward(loss);
  return loss.item();
}

double outer_step(ModelWeights& model, const AdapterSet* adapters,
                  const Sample& sample, const Tensor& mask,
                  OptimizerState& opt, double lr, double clip,
                  double* pre_clip_norm) {
  model.zero_grads();
  const double loss = outer_forward_backward(model, adapters, sample, mask);
  std::vector<Tensor*> params = model.parameters();
  const double norm = clip_grad_norm(params, clip);
  if (pre_clip_norm) *pre_clip_norm = norm;
  opt.lr = lr;
  opt.apply(params);
  model.zero_grads();
  return loss;
}

std::vector<StepReport> train(ModelWeights& model, const std::vector<Sample>& data,
                              const TrainerConfig& cfg, const TrainHooks* hooks) {
  cfg.validate();
  check(!data.empty(), "train: empty dataset");
  for (const Sample& s : data) s.seg.validate();

  OptimizerState opt = OptimizerState::adamw(cfg.outer_lr, cfg.beta1, cfg.beta2,
                                             cfg.weight_decay);
  const int steps_per_epoch =
      (static_cast<int>(data.size()) + cfg.grad_accum - 1) / cfg.grad_accum;
  const int total_steps = cfg.epochs * steps_per_epoch;
  const bool bilevel = mode_bilevel(cfg.mode);

  std::vector<StepReport> reports;
  std::vector<Tensor*> params = model.parameters();
  model.zero_grads();
  int step = 0;
  long sample_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::size_t cursor = 0;
    while (cursor < data.size()) {
      ++step;
      StepReport report;
      report.step = step;
      report.mode = cfg.mode;
      report.lr = cosine_warmup_lr(cfg.outer_lr, step, total_steps, cfg.warmup_frac);

      const std::size_t group_end =
          std::min(data.size(), cursor + static_cast<std::size_t>(cfg.grad_accum));
      const int group_size = static_cast<int>(group_end - cursor);
      double outer_loss_sum = 0.0;
      std::vector<double> inner_sum;
      for (; cursor < group_end; ++cursor, ++sample_counter) {
        const Sample& sample = data[cursor];
        const Tensor mask = mask_for_mode(cfg.mode, sample.seg);

        const AdapterSet* phi_ptr = nullptr;
        AdapterSet phi_detached;
        std::vector<double> trajectory;
        if (bilevel) {
          const auto t0 = Clock::now();
          AdapterConfig acfg = cfg.adapter;
          acfg.seed = mix_seed(cfg.seed, sample_counter);
          AdapterSet phi = init_adapters(acfg, model.config);
          InnerResult inner = inner_loop(model, std::move(phi), sample, mask, cfg,
                                         /*compute_final_loss=*/false);
          trajectory = std::move(inner.losses);
          report.grad_norm_inner = inner.last_grad_norm;
          phi_detached = inner.adapters.detached();
          phi_ptr = &phi_detached;
          if (cfg.collect_timing) report.t_inner_ms += ms_since(t0);
        }

        const auto t1 = Clock::now();
        const double loss = outer_forward_backward(model, phi_ptr, sample, mask);
        if (cfg.collect_timing) report.t_outer_ms += ms_since(t1);
        outer_loss_sum += loss;
        if (bilevel) {
          // Inner and outer share the mask and objective, so the outer loss
          // is L_inner(phi^(K)); the trajectory gets K+1 entries.
          trajectory.push_back(loss);
          if (inner_sum.empty()) inner_sum.assign(trajectory.size(), 0.0);
          for (std::size_t i = 0; i < trajectory.size(); ++i)
            inner_sum[i] += trajectory[i];
        }
      }

      report.outer_loss = outer_loss_sum / group_size;
      for (double v : inner_sum) report.inner_losses.push_back(v / group_size);
      if (group_size > 1) {
        for (Tensor* p : params)
          for (double& g : *p->grad) g /= group_size;
      }
      report.grad_norm_outer = clip_grad_norm(params, cfg.outer_clip);
      opt.lr = report.lr;
      opt.apply(params);
      model.zero_grads();

      reports.push_back(report);
      if (hooks && hooks->on_step) hooks->on_step(report);
      if (hooks && hooks->on_checkpoint && cfg.checkpoint_cadence > 0 &&
          step % cfg.checkpoint_cadence == 0)
        hooks->on_checkpoint(step, model);
    }
  }
  return reports;
}

namespace {

std::vector<int> greedy_decode_answers(ModelWeights& model, const Sample& sample) {
  NoGradGuard no_grad;
  std::vector<int> tokens = sample.tokens;
  const Tensor mask = build_causal_mask(static_cast<int>(tokens.size()));
  std::vector<int> predicted;
  for (int pos : sample.answer_span) {
    Tensor logits = forward(model, tokens, mask);
    const int v = logits.shape[1];
    const double* row = logits.values().data() + static_cast<size_t>(pos - 1) * v;
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    predicted.push_back(best);
    tokens[pos] = best;
  }
  return predicted;
}

double sample_depth(const Sample& sample) {
  if (sample.needle_positions.empty()) return 0.0;
  double mean = 0.0;
  for (int p : sample.needle_positions) mean += p;
  mean /= static_cast<double>(sample.needle_positions.size());
  return mean / static_cast<double>(sample.tokens.size());
}

}  // namespace

EvalResult evaluate(ModelWeights& model, const std::vector<Sample>& data) {
  EvalResult result;
  int correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& sample = data[i];
    check(!sample.answer_span.empty(), "evaluate: sample lacks a gold answer span");
    EvalRecord rec;
    rec.sample_index = static_cast<int>(i);
    rec.kind = sample.kind;
    rec.needle_depth = sample_depth(sample);
    rec.predicted = greedy_decode_answers(model, sample);
    for (int pos : sample.answer_span) rec.gold.push_back(sample.tokens[pos]);
    rec.correct = rec.predicted == rec.gold;
    correct += rec.correct ? 1 : 0;
    result.records.push_back(std::move(rec));
  }
  result.accuracy = data.empty() ? 0.0 : static_cast<double>(correct) / data.size();
  return result;
}

InferenceAdaptResult inference_adapt(ModelWeights& model, const Sample& sample,
                                     int k_steps, double eta_in,
                                     const AdapterConfig& adapter_cfg,
                                     uint64_t seed) {
  InferenceAdaptResult result;
  result.base_predicted = greedy_decode_answers(model, sample);
  std::vector<int> gold;
  for (int pos : sample.answer_span) gold.push_back(sample.tokens[pos]);
  result.base_correct = result.base_predicted == gold;

  // The adaptation target is the held-in pseudo-response: response positions
  // outside the answer span (the answer itself is unknown at test time).
  std::vector<int> pseudo;
  for (int i : sample.seg.response_positions()) {
    bool in_answer = false;
    for (int a : sample.answer_span) in_answer = in_answer || a == i;
    if (!in_answer) pseudo.push_back(i);
  }
  if (pseudo.empty()) {
    result.skipped = true;
    result.adapted_predicted = result.base_predicted;
    result.adapted_correct = result.base_correct;
    return result;
  }

  AdapterConfig acfg = adapter_cfg;
  acfg.seed = seed;
  AdapterSet phi = init_adapters(acfg, model.config);
  phi.set_requires_grad(true);
  model.set_requires_grad(false);
  const Tensor mask = build_causal_mask(static_cast<int>(sample.tokens.size()));
  std::vector<Tensor*> params = phi.parameters();
  for (int k = 0; k < k_steps; ++k) {
    Tape tape;
    Tensor logits = forward(model, sample.tokens, mask, &phi);
    Tensor loss = response_cross_entropy(logits, sample.tokens, pseudo);
    check_finite_loss(loss.item(), "inference_adapt");
    tape.backward(loss);
    clip_grad_norm(params, 1.0);
    for (Tensor* p : params) {
      for (std::size_t i = 0; i < p->numel(); ++i)
        p->values()[i] -= eta_in * p->grads()[i];
      p->zero_grad();
    }
  }
  model.set_requires_grad(true);

  // Decode with the adapted fast weights, then discard them.
  {
    NoGradGuard no_grad;
    std::vector<int> tokens = sample.tokens;
    for (int pos : sample.answer_span) {
      Tensor logits = forward(model, tokens, mask, &phi);
      const int v = logits.shape[1];
      const double* row = logits.values().data() + static_cast<size_t>(pos - 1) * v;
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      result.adapted_predicted.push_back(best);
      tokens[pos] = best;
    }
  }
  result.adapted_correct = result.adapted_predicted == gold;
  return result;
}

}  // namespace focusft
