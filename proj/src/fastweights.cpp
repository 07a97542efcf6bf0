#include "focusft/fastweights.hpp"

#include <cmath>

#include "focusft/rng.hpp"

namespace focusft {

void AdapterConfig::validate(const ModelConfig& model) const {
  check(rank >= 1, "AdapterConfig: rank must be >= 1");
  check(rank <= std::min(model.d_model, model.d_ff),
        "AdapterConfig: rank exceeds FFN dimensions");
  check(layer_fraction > 0.0 && layer_fraction <= 1.0,
        "AdapterConfig: layer_fraction must be in (0,1]");
}

std::set<int> select_layers(int n_layers, double layer_fraction) {
  check(n_layers >= 1, "select_layers: n_layers must be >= 1");
  const int count = static_cast<int>(std::lround(layer_fraction * n_layers));
  check(count >= 1, "select_layers: fraction selects zero layers");
  check(count <= n_layers, "select_layers: fraction selects too many layers");
  std::set<int> out;
  for (int l = n_layers - count; l < n_layers; ++l) out.insert(l);
  return out;
}

AdapterSet init_adapters(const AdapterConfig& config, const ModelConfig& model) {
  config.validate(model);
  model.validate();
  AdapterSet set;
  set.config = config;
  set.layer_indices = select_layers(model.n_layers, config.layer_fraction);
  set.adapters.resize(model.n_layers);
  Rng rng(config.seed);
  // Host matrix shapes: w1 is [d x d_ff], w2 is [d_ff x d].
  const std::vector<std::pair<int, int>> host_dims = {
      {model.d_model, model.d_ff}, {model.d_ff, model.d_model}};
  for (int l : set.layer_indices) {
    for (auto [in, out] : host_dims) {
      Adapter ad;
      // A scaled-normal with std 1/sqrt(in), B zero: zero effect, nonzero
      // gradient through B.
      ad.a = Tensor({config.rank, in}, true);
      const double std_a = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& v : ad.a.values()) v = rng.normal() * std_a;
      ad.b = Tensor({out, config.rank}, true);
      set.adapters[l].push_back(std::move(ad));
    }
  }
  return set;
}

Tensor adapter_delta(const AdapterSet& set, int layer, int matrix_id, const Tensor& x) {
  check(layer >= 0 && layer < static_cast<int>(set.adapters.size()) &&
            set.hooks_layer(layer),
        "adapter_delta: layer has no adapter hook");
  check(matrix_id >= 0 && matrix_id < static_cast<int>(set.adapters[layer].size()),
        "adapter_delta: unregistered matrix hook");
  const Adapter& ad = set.adapters[layer][matrix_id];
  // x [T x in] -> [T x rank] -> [T x out], scaled by alpha/rank.
  return scale(matmul_nt(matmul_nt(x, ad.a), ad.b), set.config.scaling());
}

std::vector<Tensor*> AdapterSet::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : adapters) {
    for (Adapter& ad : layer) {
      out.push_back(&ad.a);
      out.push_back(&ad.b);
    }
  }
  return out;
}

void AdapterSet::zero_grads() {
  for (Tensor* t : parameters()) t->zero_grad();
}

void AdapterSet::set_requires_grad(bool enabled) {
  for (Tensor* t : parameters()) {
    t->requires_grad = enabled;
    if (enabled) t->ensure_grad();
  }
}

std::size_t AdapterSet::param_count() const {
  std::size_t n = 0;
  for (const auto& layer : adapters)
    for (const Adapter& ad : layer) n += ad.a.numel() + ad.b.numel();
  return n;
}

AdapterSet AdapterSet::detached() const {
  AdapterSet out;
  out.config = config;
  out.layer_indices = layer_indices;
  out.adapters.resize(adapters.size());
  for (std::size_t l = 0; l < adapters.size(); ++l) {
    for (const Adapter& ad : adapters[l]) {
      Adapter copy;
      copy.a = ad.a.detached();
      copy.b = ad.b.detached();
      out.adapters[l].push_back(std::move(copy));
    }
  }
  return out;
}

AdapterSet reset(const AdapterSet& set, const ModelConfig& model, uint64_t seed) {
  AdapterConfig cfg = set.config;
  cfg.seed = seed;
  return init_adapters(cfg, model);
}

}  // namespace focusft
