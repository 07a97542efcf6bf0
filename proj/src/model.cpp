#include "focusft/model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "focusft/fastweights.hpp"
#include "focusft/rng.hpp"

namespace focusft {

void ModelConfig::validate() const {
  check(n_layers >= 1, "ModelConfig: n_layers must be >= 1");
  check(n_heads >= 1, "ModelConfig: n_heads must be >= 1");
  check(d_model >= 1 && d_ff >= 1, "ModelConfig: widths must be >= 1");
  check(vocab_size >= 2, "ModelConfig: vocab_size must be >= 2");
  check(d_model % n_heads == 0, "ModelConfig: d_model not divisible by n_heads");
  check(d_head() % 2 == 0, "ModelConfig: d_head must be even for rope pairing");
  check(max_seq_len >= 1, "ModelConfig: max_seq_len must be >= 1");
  check(rope_base > 1.0, "ModelConfig: rope_base must exceed 1");
}

namespace {

Tensor random_matrix(Rng& rng, int rows, int cols, double std) {
  Tensor t({rows, cols}, true);
  for (double& v : t.values()) v = rng.normal() * std;
  return t;
}

Tensor ones_vector(int n) {
  Tensor t({n}, true);
  std::fill(t.values().begin(), t.values().end(), 1.0);
  return t;
}

}  // namespace

ModelWeights init_model(const ModelConfig& config) {
  config.validate();
  ModelWeights w;
  w.config = config;
  Rng rng(config.seed);
  const double std_in = 0.02;
  // Residual-output matrices get the depth-scaled init.
  const double std_out = 0.02 / std::sqrt(2.0 * config.n_layers);
  w.embedding = random_matrix(rng, config.vocab_size, config.d_model, std_in);
  w.final_gain = ones_vector(config.d_model);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_gain = ones_vector(config.d_model);
    lw.wq = random_matrix(rng, config.d_model, config.d_model, std_in);
    lw.wk = random_matrix(rng, config.d_model, config.d_model, std_in);
    lw.wv = random_matrix(rng, config.d_model, config.d_model, std_in);
    lw.wo = random_matrix(rng, config.d_model, config.d_model, std_out);
    lw.ffn_gain = ones_vector(config.d_model);
    lw.w1 = random_matrix(rng, config.d_model, config.d_ff, std_in);
    lw.w2 = random_matrix(rng, config.d_ff, config.d_model, std_out);
    w.layers.push_back(std::move(lw));
  }
  return w;
}

std::vector<Tensor*> ModelWeights::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelWeights::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embedding", &embedding);
  out.emplace_back("final_gain", &final_gain);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "attn_gain", &layers[l].attn_gain);
    out.emplace_back(p + "wq", &layers[l].wq);
    out.emplace_back(p + "wk", &layers[l].wk);
    out.emplace_back(p + "wv", &layers[l].wv);
    out.emplace_back(p + "wo", &layers[l].wo);
    out.emplace_back(p + "ffn_gain", &layers[l].ffn_gain);
    out.emplace_back(p + "w1", &layers[l].w1);
    out.emplace_back(p + "w2", &layers[l].w2);
  }
  return out;
}

void ModelWeights::set_requires_grad(bool enabled) {
  for (Tensor* t : parameters()) {
    t->requires_grad = enabled;
    if (enabled) t->ensure_grad();
  }
}

void ModelWeights::zero_grads() {
  for (Tensor* t : parameters()) t->zero_grad();
}

std::size_t ModelWeights::param_count() const {
  std::size_t n = 0;
  auto& self = const_cast<ModelWeights&>(*this);
  for (Tensor* t : self.parameters()) n += t->numel();
  return n;
}

Tensor attention(const Tensor& h, const LayerWeights& w, const ModelConfig& cfg,
                 const Tensor& mask, AttentionTrace* trace, int layer_index,
                 const std::vector<int>* positions) {
  const int t = h.shape[0];
  check(h.shape[1] == cfg.d_model, "attention: hidden width mismatch");
  check(mask.shape == std::vector<int>({t, t}), "attention: mask shape mismatch");
  const int dh = cfg.d_head();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = matmul(h, w.wq);
  Tensor k = matmul(h, w.wk);
  Tensor v = matmul(h, w.wv);

  std::vector<Tensor> head_outs;
  head_outs.reserve(cfg.n_heads);
  for (int hd = 0; hd < cfg.n_heads; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor kh = slice_cols(k, hd * dh, dh);
    Tensor vh = slice_cols(v, hd * dh, dh);
    if (cfg.rope_enabled && positions) {
      qh = rope(qh, *positions, cfg.rope_base);
      kh = rope(kh, *positions, cfg.rope_base);
    }
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
    Tensor alpha = softmax_rows(scores, mask);
    if (trace && trace->enabled) {
      if (static_cast<int>(trace->alpha.size()) <= layer_index)
        trace->alpha.resize(layer_index + 1);
      trace->alpha[layer_index].push_back(alpha.values());
      trace->seq_len = t;
    }
    head_outs.push_back(matmul(alpha, vh));
  }
  return matmul(concat_cols(head_outs), w.wo);
}

Tensor forward(const ModelWeights& w, const std::vector<int>& tokens,
               const Tensor& mask, const AdapterSet* adapters,
               AttentionTrace* trace) {
  const int t = static_cast<int>(tokens.size());
  check(t >= 1, "forward: empty token sequence");
  check(t <= w.config.max_seq_len, "forward: sequence exceeds max_seq_len");
  check(mask.shape == std::vector<int>({t, t}), "forward: mask shape mismatch");
  std::vector<int> positions(t);
  for (int i = 0; i < t; ++i) positions[i] = i;

  Tensor x = embedding_lookup(w.embedding, tokens);
  for (int l = 0; l < w.config.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];
    Tensor hn = rms_norm(x, lw.attn_gain);
    x = add(x, attention(hn, lw, w.config, mask, trace, l, &positions));

    Tensor fn = rms_norm(x, lw.ffn_gain);
    Tensor u = matmul(fn, lw.w1);
    const bool hooked = adapters && adapters->hooks_layer(l);
    if (hooked) u = add(u, adapter_delta(*adapters, l, 0, fn));
    Tensor act = silu(u);
    Tensor y = matmul(act, lw.w2);
    if (hooked) y = add(y, adapter_delta(*adapters, l, 1, act));
    x = add(x, y);
  }
  Tensor xn = rms_norm(x, w.final_gain);
  return matmul_nt(xn, w.embedding);
}

Tensor response_cross_entropy(const Tensor& logits, const std::vector<int>& tokens,
                              const std::vector<int>& response_positions) {
  check(!response_positions.empty(), "response_cross_entropy: empty response set");
  check(logits.shape.size() == 2, "response_cross_entropy: logits must be T x V");
  const int t = logits.shape[0], v = logits.shape[1];
  check(static_cast<int>(tokens.size()) == t, "response_cross_entropy: token count mismatch");
  const auto& r = response_positions;
  for (int i : r) {
    check(i >= 1 && i < t, "response_cross_entropy: response position needs a prefix");
    check(tokens[i] >= 0 && tokens[i] < v, "response_cross_entropy: token out of range");
  }

  // Softmax rows are kept for the analytic backward.
  const std::size_t nr = r.size();
  std::vector<double> probs(nr * v);
  double loss = 0.0;
  for (std::size_t ri = 0; ri < nr; ++ri) {
    const double* z = logits.values().data() + static_cast<size_t>(r[ri] - 1) * v;
    double mx = z[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double denom = 0.0;
    double* p = probs.data() + ri * v;
    for (int j = 0; j < v; ++j) {
      p[j] = std::exp(z[j] - mx);
      denom += p[j];
    }
    for (int j = 0; j < v; ++j) p[j] /= denom;
    loss -= std::log(p[tokens[r[ri]]]);
  }
  loss /= static_cast<double>(nr);

  Tensor out = Tensor::scalar(loss);
  if (!std::isfinite(loss)) fail_numerical("response_cross_entropy: non-finite loss");
  if (Tape::active() && logits.requires_grad) {
    std::vector<int> targets(nr);
    for (std::size_t ri = 0; ri < nr; ++ri) targets[ri] = tokens[r[ri]];
    out.requires_grad = true;
    out.ensure_grad();
    out.tape_id = Tape::active()->id();
    Tape::active()->record(out, [logits, out, r, targets, probs, v]() mutable {
      const double g = out.grads()[0] / static_cast<double>(r.size());
      for (std::size_t ri = 0; ri < r.size(); ++ri) {
        double* zg = logits.grad->data() + static_cast<size_t>(r[ri] - 1) * v;
        const double* p = probs.data() + ri * v;
        for (int j = 0; j < v; ++j) zg[j] += g * p[j];
        zg[targets[ri]] -= g;
      }
    });
  }
  return out;
}

// ---- checkpoint io ---------------------------------------------------------

void save_checkpoint(const ModelWeights& w, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  ModelWeights& mw = const_cast<ModelWeights&>(w);

  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  check(manifest.good(), "save_checkpoint: cannot open manifest");
  manifest << "format focusft-checkpoint-v1\n";
  manifest << "dtype f64\n";
  manifest << "endianness little\n";
  manifest << "n_layers " << w.config.n_layers << "\n";
  manifest << "n_heads " << w.config.n_heads << "\n";
  manifest << "d_model " << w.config.d_model << "\n";
  manifest << "d_ff " << w.config.d_ff << "\n";
  manifest << "vocab_size " << w.config.vocab_size << "\n";
  manifest << "max_seq_len " << w.config.max_seq_len << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", w.config.rope_base);
  manifest << "rope_base " << buf << "\n";
  manifest << "seed " << w.config.seed << "\n";

  std::ofstream blob(fs::path(dir) / "weights.bin", std::ios::binary);
  check(blob.good(), "save_checkpoint: cannot open blob");
  std::size_t offset = 0;
  for (auto& [name, t] : mw.named_parameters()) {
    manifest << "param " << name << " ";
    for (std::size_t i = 0; i < t->shape.size(); ++i)
      manifest << (i ? "x" : "") << t->shape[i];
    manifest << " " << offset << " " << t->numel() << "\n";
    blob.write(reinterpret_cast<const char*>(t->values().data()),
               static_cast<std::streamsize>(t->numel() * sizeof(double)));
    offset += t->numel() * sizeof(double);
  }
  check(blob.good() && manifest.good(), "save_checkpoint: write failed");
}

ModelWeights load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  check(manifest.good(), "load_checkpoint: cannot open manifest");

  ModelConfig cfg;
  struct Entry {
    std::string name;
    std::size_t offset = 0;
    std::size_t count = 0;
  };
  std::vector<Entry> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string v;
      ls >> v;
      check(v == "focusft-checkpoint-v1", "load_checkpoint: unknown format");
    } else if (key == "dtype" || key == "endianness") {
      // fixed in v1
    } else if (key == "n_layers") ls >> cfg.n_layers;
    else if (key == "n_heads") ls >> cfg.n_heads;
    else if (key == "d_model") ls >> cfg.d_model;
    else if (key == "d_ff") ls >> cfg.d_ff;
    else if (key == "vocab_size") ls >> cfg.vocab_size;
    else if (key == "max_seq_len") ls >> cfg.max_seq_len;
    else if (key == "rope_base") ls >> cfg.rope_base;
    else if (key == "seed") ls >> cfg.seed;
    else if (key == "param") {
      Entry e;
      std::string shape;
      ls >> e.name >> shape >> e.offset >> e.count;
      entries.push_back(e);
    } else {
      fail("load_checkpoint: unknown manifest key: " + key);
    }
  }

  ModelWeights w = init_model(cfg);
  std::ifstream blob(fs::path(dir) / "weights.bin", std::ios::binary);
  check(blob.good(), "load_checkpoint: cannot open blob");
  auto named = w.named_parameters();
  check(named.size() == entries.size(), "load_checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    check(entries[i].name == named[i].first, "load_checkpoint: parameter name mismatch");
    Tensor* t = named[i].second;
    check(entries[i].count == t->numel(), "load_checkpoint: parameter size mismatch");
    blob.seekg(static_cast<std::streamoff>(entries[i].offset));
    blob.read(reinterpret_cast<char*>(t->values().data()),
              static_cast<std::streamsize>(t->numel() * sizeof(double)));
    check(blob.good(), "load_checkpoint: read failed");
  }
  return w;
}

}  // namespace focusft
