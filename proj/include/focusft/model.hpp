#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "focusft/tensor.hpp"

namespace focusft {

struct AdapterSet;

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int vocab_size = 64;
  int max_seq_len = 512;
  double rope_base = 10000.0;
  uint64_t seed = 1234;
  // Test mode for permutation-symmetry oracles; positions are ignored.
  bool rope_enabled = true;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

struct LayerWeights {
  Tensor attn_gain;  // [d]
  Tensor wq, wk, wv, wo;  // [d x d]
  Tensor ffn_gain;  // [d]
  Tensor w1;  // [d x d_ff]
  Tensor w2;  // [d_ff x d]
};

// Post-softmax attention weights captured during a forward pass.
// alpha[layer][head] is a T x T row-major matrix (query x key).
struct AttentionTrace {
  bool enabled = false;
  int seq_len = 0;
  std::vector<std::vector<std::vector<double>>> alpha;
  void clear() {
    alpha.clear();
    seq_len = 0;
  }
};

struct ModelWeights {
  ModelConfig config;
  Tensor embedding;  // [V x d]; output head is tied to it
  Tensor final_gain;
  std::vector<LayerWeights> layers;

  std::vector<Tensor*> parameters();
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  void set_requires_grad(bool enabled);
  void zero_grads();
  std::size_t param_count() const;
};

ModelWeights init_model(const ModelConfig& config);

// Single attention block on hidden states h [T x d]: per head
// z = q k^T / sqrt(d_head) (+ rope when positions given and enabled),
// alpha = masked row softmax, heads concatenated through wo.
Tensor attention(const Tensor& h, const LayerWeights& w, const ModelConfig& cfg,
                 const Tensor& mask, AttentionTrace* trace = nullptr,
                 int layer_index = 0,
                 const std::vector<int>* positions = nullptr);

// Full pre-norm forward: embeddings -> n_layers x (attention + FFN with
// optional adapter hook) -> final norm -> tied head. Returns logits [T x V].
Tensor forward(const ModelWeights& w, const std::vector<int>& tokens,
               const Tensor& mask, const AdapterSet* adapters = nullptr,
               AttentionTrace* trace = nullptr);

// Mean over response positions of -log p(x_i | x_<i}); the probability for
// target position i comes from the logits row i-1.
Tensor response_cross_entropy(const Tensor& logits, const std::vector<int>& tokens,
                              const std::vector<int>& response_positions);

// Checkpoint: text manifest (config, parameter table with byte offsets,
// little-endian f64) plus one flat binary blob. Bit-exact round trip.
void save_checkpoint(const ModelWeights& w, const std::string& dir);
ModelWeights load_checkpoint(const std::string& dir);

}  // namespace focusft
