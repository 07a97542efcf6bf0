#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "focusft/model.hpp"
#include "focusft/tensor.hpp"

namespace focusft {

struct AdapterConfig {
  int rank = 8;
  double alpha = 16.0;
  double layer_fraction = 0.5;
  uint64_t seed = 0;

  double scaling() const { return alpha / rank; }
  void validate(const ModelConfig& model) const;
};

// One low-rank delta on a host matrix with input width `in` and output
// width `out`: y += scaling * (x A^T) B^T. A is random, B starts at zero,
// so a fresh adapter is a bitwise no-op on the forward pass.
struct Adapter {
  Tensor a;  // [rank x in]
  Tensor b;  // [out x rank]
};

// The fast weights phi: per selected layer, one adapter per FFN matrix.
// Re-created every training step and discarded afterwards.
struct AdapterSet {
  AdapterConfig config;
  std::set<int> layer_indices;
  // adapters[layer] is laid out {w1 adapter, w2 adapter}; absent layers are
  // empty vectors.
  std::vector<std::vector<Adapter>> adapters;

  bool hooks_layer(int layer) const { return !adapters[layer].empty(); }
  std::vector<Tensor*> parameters();
  void zero_grads();
  void set_requires_grad(bool enabled);
  std::size_t param_count() const;
  // Value copies with no grads and no tape linkage (phi^(K) handed to the
  // outer loop).
  AdapterSet detached() const;
};

// The round(fraction * n_layers) highest layer indices (0-indexed).
std::set<int> select_layers(int n_layers, double layer_fraction);

AdapterSet init_adapters(const AdapterConfig& config, const ModelConfig& model);

// scaling * B (A x_row) applied to x [T x in]; matrix_id 0 hooks w1, 1 hooks w2.
Tensor adapter_delta(const AdapterSet& set, int layer, int matrix_id, const Tensor& x);

// Equivalent to init_adapters with the new seed; all adapted state is gone.
AdapterSet reset(const AdapterSet& set, const ModelConfig& model, uint64_t seed);

}  // namespace focusft
