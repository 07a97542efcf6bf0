#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "focusft/fastweights.hpp"
#include "focusft/masking.hpp"
#include "focusft/model.hpp"
#include "focusft/rng.hpp"

using namespace focusft;

namespace {

ModelConfig tiny_config(uint64_t seed = 5, bool rope = true) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 24;
  cfg.vocab_size = 20;
  cfg.max_seq_len = 64;
  cfg.seed = seed;
  cfg.rope_enabled = rope;
  return cfg;
}

using Mat = std::vector<std::vector<double>>;

Mat as_mat(const Tensor& t) {
  Mat m(t.shape[0], std::vector<double>(t.shape[1]));
  for (int i = 0; i < t.shape[0]; ++i)
    for (int j = 0; j < t.shape[1]; ++j) m[i][j] = t.values()[i * t.shape[1] + j];
  return m;
}

Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat rms(const Mat& x, const std::vector<double>& gain, double eps = 1e-8) {
  Mat out(x.size(), std::vector<double>(x[0].size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    double ssq = 0.0;
    for (double v : x[i]) ssq += v * v;
    const double inv = 1.0 / std::sqrt(ssq / x[i].size() + eps);
    for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] = x[i][j] * inv * gain[j];
  }
  return out;
}

// Straight-line re-implementation of the full forward pass with plain loops
// and no tape; used as an independent oracle.
Mat oracle_forward(const ModelWeights& w, const std::vector<int>& tokens,
                   const Mat& mask) {
  const ModelConfig& cfg = w.config;
  const int t = static_cast<int>(tokens.size());
  const int d = cfg.d_model;
  const int dh = cfg.d_head();

  Mat x(t, std::vector<double>(d));
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) x[i][j] = w.embedding.values()[tokens[i] * d + j];

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];
    Mat hn = rms(x, lw.attn_gain.values());
    Mat q = mat_mul(hn, as_mat(lw.wq));
    Mat k = mat_mul(hn, as_mat(lw.wk));
    Mat v = mat_mul(hn, as_mat(lw.wv));
    Mat concat(t, std::vector<double>(d, 0.0));
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      Mat qh(t, std::vector<double>(dh)), kh(t, std::vector<double>(dh));
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < dh; ++j) {
          qh[i][j] = q[i][hd * dh + j];
          kh[i][j] = k[i][hd * dh + j];
        }
      if (cfg.rope_enabled) {
        for (int i = 0; i < t; ++i)
          for (int p = 0; p < dh / 2; ++p) {
            const double freq = std::pow(cfg.rope_base, -2.0 * p / dh);
            const double phi = i * freq;
            const double c = std::cos(phi), s = std::sin(phi);
            const double q0 = qh[i][2 * p], q1 = qh[i][2 * p + 1];
            qh[i][2 * p] = q0 * c - q1 * s;
            qh[i][2 * p + 1] = q0 * s + q1 * c;
            const double k0 = kh[i][2 * p], k1 = kh[i][2 * p + 1];
            kh[i][2 * p] = k0 * c - k1 * s;
            kh[i][2 * p + 1] = k0 * s + k1 * c;
          }
      }
      for (int i = 0; i < t; ++i) {
        std::vector<double> scores(t, 0.0);
        double mx = -1e300;
        for (int j = 0; j < t; ++j) {
          if (mask[i][j] != 0.0) continue;
          for (int p = 0; p < dh; ++p) scores[j] += qh[i][p] * kh[j][p];
          scores[j] /= std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        std::vector<double> alpha(t, 0.0);
        for (int j = 0; j < t; ++j) {
          if (mask[i][j] != 0.0) continue;
          alpha[j] = std::exp(scores[j] - mx);
          denom += alpha[j];
        }
        for (int j = 0; j < t; ++j) alpha[j] /= denom;
        for (int j = 0; j < t; ++j)
          for (int p = 0; p < dh; ++p)
            concat[i][hd * dh + p] += alpha[j] * v[j][hd * dh + p];
      }
    }
    Mat attn_out = mat_mul(concat, as_mat(lw.wo));
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) x[i][j] += attn_out[i][j];

    Mat fn = rms(x, lw.ffn_gain.values());
    Mat u = mat_mul(fn, as_mat(lw.w1));
    for (auto& row : u)
      for (double& val : row) val = val / (1.0 + std::exp(-val));
    Mat y = mat_mul(u, as_mat(lw.w2));
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) x[i][j] += y[i][j];
  }

  Mat xn = rms(x, w.final_gain.values());
  Mat logits(t, std::vector<double>(cfg.vocab_size, 0.0));
  for (int i = 0; i < t; ++i)
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok)
      for (int j = 0; j < d; ++j)
        logits[i][vtok] += xn[i][j] * w.embedding.values()[vtok * d + j];
  return logits;
}

std::vector<int> random_tokens(Rng& rng, int t, int vocab) {
  std::vector<int> tokens(t);
  for (int& tok : tokens) tok = static_cast<int>(rng.uniform_index(vocab));
  return tokens;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.d_model = 17;
  CHECK_THROWS_AS(cfg.validate(), TensorError);  // not divisible by heads
  cfg = tiny_config();
  cfg.n_heads = 8;  // d_head 2 ok; 16/8=2 even — force odd d_head instead
  cfg.d_model = 24;
  cfg.n_heads = 8;  // d_head 3, odd
  CHECK_THROWS_AS(cfg.validate(), TensorError);
}

TEST_CASE("init determinism and seed sensitivity") {
  ModelWeights a = init_model(tiny_config(5));
  ModelWeights b = init_model(tiny_config(5));
  ModelWeights c = init_model(tiny_config(6));
  CHECK(a.embedding.values() == b.embedding.values());
  CHECK(a.layers[1].w1.values() == b.layers[1].w1.values());
  CHECK(a.embedding.values() != c.embedding.values());
  for (double g : a.final_gain.values()) CHECK(g == 1.0);
}

TEST_CASE("init logit std lies in the sanity band") {
  ModelConfig cfg;
  cfg.seed = 9;
  ModelWeights w = init_model(cfg);
  Rng rng(10);
  std::vector<int> tokens = random_tokens(rng, 32, cfg.vocab_size);
  NoGradGuard no_grad;
  Tensor logits = forward(w, tokens, build_causal_mask(32));
  for (int i = 0; i < 32; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < cfg.vocab_size; ++j) mean += logits.values()[i * cfg.vocab_size + j];
    mean /= cfg.vocab_size;
    for (int j = 0; j < cfg.vocab_size; ++j) {
      const double dlt = logits.values()[i * cfg.vocab_size + j] - mean;
      var += dlt * dlt;
    }
    const double sd = std::sqrt(var / cfg.vocab_size);
    CHECK(sd > 0.1);
    CHECK(sd < 10.0);
  }
}

TEST_CASE("attention with one token applies only the value path") {
  ModelConfig cfg = tiny_config(11, false);
  ModelWeights w = init_model(cfg);
  Tensor h({1, cfg.d_model});
  Rng rng(12);
  for (double& v : h.values()) v = rng.normal();
  Tensor out = attention(h, w.layers[0], cfg, build_causal_mask(1));
  Tensor expected = matmul(matmul(h, w.layers[0].wv), w.layers[0].wo);
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-12));
}

TEST_CASE("attention matches a brute-force evaluation") {
  ModelConfig cfg = tiny_config(13);
  cfg.n_heads = 1;
  ModelWeights w = init_model(cfg);
  const int t = 2, d = cfg.d_model;
  Tensor h({t, d});
  Rng rng(14);
  for (double& v : h.values()) v = rng.normal();
  std::vector<int> positions = {0, 1};
  Tensor out = attention(h, w.layers[0], cfg, build_causal_mask(t), nullptr, 0,
                         &positions);

  // Direct evaluation: scores, softmax, weighted values, output projection.
  Tensor q = rope(matmul(h, w.layers[0].wq), positions, cfg.rope_base);
  Tensor k = rope(matmul(h, w.layers[0].wk), positions, cfg.rope_base);
  Tensor v = matmul(h, w.layers[0].wv);
  auto dot = [&](const Tensor& a, int i, const Tensor& b, int j) {
    double s = 0.0;
    for (int p = 0; p < d; ++p) s += a.values()[i * d + p] * b.values()[j * d + p];
    return s / std::sqrt(static_cast<double>(d));
  };
  // Row 0 sees only key 0 => alpha = 1.
  // Row 1: softmax over two keys.
  const double z0 = dot(q, 1, k, 0), z1 = dot(q, 1, k, 1);
  const double mx = std::max(z0, z1);
  const double a0 = std::exp(z0 - mx), a1 = std::exp(z1 - mx);
  for (int p = 0; p < d; ++p) {
    const double o1 = (a0 * v.values()[p] + a1 * v.values()[d + p]) / (a0 + a1);
    double expected0 = 0.0, expected1 = 0.0;
    for (int c = 0; c < d; ++c) {
      const double o1c =
          (a0 * v.values()[c] + a1 * v.values()[d + c]) / (a0 + a1);
      expected0 += v.values()[c] * w.layers[0].wo.values()[c * d + p];
      expected1 += o1c * w.layers[0].wo.values()[c * d + p];
    }
    (void)o1;
    CHECK(out.values()[p] == doctest::Approx(expected0).epsilon(1e-9));
    CHECK(out.values()[d + p] == doctest::Approx(expected1).epsilon(1e-9));
  }
}

TEST_CASE("last query row is identical under all-zero and causal masks") {
  ModelConfig cfg = tiny_config(15);
  ModelWeights w = init_model(cfg);
  const int t = 6;
  Tensor h({t, cfg.d_model});
  Rng rng(16);
  for (double& v : h.values()) v = rng.normal();
  std::vector<int> positions = {0, 1, 2, 3, 4, 5};
  Tensor causal = attention(h, w.layers[0], cfg, build_causal_mask(t), nullptr, 0,
                            &positions);
  Tensor open = attention(h, w.layers[0], cfg, Tensor::zeros({t, t}), nullptr, 0,
                          &positions);
  for (int j = 0; j < cfg.d_model; ++j)
    CHECK(causal.values()[(t - 1) * cfg.d_model + j] ==
          doctest::Approx(open.values()[(t - 1) * cfg.d_model + j]).epsilon(1e-12));
}

TEST_CASE("fully masked attention row is an error") {
  ModelConfig cfg = tiny_config(17);
  ModelWeights w = init_model(cfg);
  Tensor h({2, cfg.d_model});
  for (double& v : h.values()) v = 0.5;
  Tensor mask = Tensor::zeros({2, 2});
  mask.values()[0] = kMaskedLogit;
  mask.values()[1] = kMaskedLogit;
  CHECK_THROWS_AS(attention(h, w.layers[0], cfg, mask), TensorError);
}

TEST_CASE("forward matches the tape-free oracle") {
  for (bool rope_on : {true, false}) {
    ModelConfig cfg = tiny_config(18, rope_on);
    ModelWeights w = init_model(cfg);
    Rng rng(19);
    std::vector<int> tokens = random_tokens(rng, 3, cfg.vocab_size);
    Segmentation seg;
    seg.labels = {TokenLabel::Context, TokenLabel::Context, TokenLabel::Response};
    seg.turn_ids = {0, 0, 1};
    for (const Tensor& mask :
         {build_causal_mask(3), build_focusft_mask(seg)}) {
      NoGradGuard no_grad;
      Tensor logits = forward(w, tokens, mask);
      Mat expected = oracle_forward(w, tokens, as_mat(mask));
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < cfg.vocab_size; ++j)
          CHECK(logits.values()[i * cfg.vocab_size + j] ==
                doctest::Approx(expected[i][j]).epsilon(1e-9));
    }
  }
}

TEST_CASE("forward input validation") {
  ModelConfig cfg = tiny_config(20);
  ModelWeights w = init_model(cfg);
  NoGradGuard no_grad;
  CHECK_THROWS_AS(forward(w, {0, cfg.vocab_size}, build_causal_mask(2)), TensorError);
  CHECK_THROWS_AS(forward(w, {0, 1, 2}, build_causal_mask(2)), TensorError);
  std::vector<int> too_long(cfg.max_seq_len + 1, 0);
  CHECK_THROWS_AS(
      forward(w, too_long, build_causal_mask(cfg.max_seq_len + 1)), TensorError);
}

TEST_CASE("zero-initialized adapters leave the forward pass bit-identical") {
  ModelConfig cfg = tiny_config(21);
  ModelWeights w = init_model(cfg);
  AdapterConfig acfg;
  acfg.rank = 4;
  acfg.alpha = 8.0;
  acfg.layer_fraction = 1.0;
  acfg.seed = 77;
  AdapterSet adapters = init_adapters(acfg, cfg);
  Rng rng(22);
  std::vector<int> tokens = random_tokens(rng, 8, cfg.vocab_size);
  NoGradGuard no_grad;
  Tensor plain = forward(w, tokens, build_causal_mask(8));
  Tensor hooked = forward(w, tokens, build_causal_mask(8), &adapters);
  CHECK(plain.values() == hooked.values());  // exactly, not approximately
}

TEST_CASE("context permutation symmetry with rope disabled") {
  ModelConfig cfg = tiny_config(23, /*rope=*/false);
  ModelWeights w = init_model(cfg);
  Segmentation seg;
  for (int i = 0; i < 6; ++i) seg.labels.push_back(TokenLabel::Context);
  for (int i = 0; i < 2; ++i) seg.labels.push_back(TokenLabel::Response);
  seg.turn_ids = {0, 0, 0, 0, 0, 0, 1, 1};
  Tensor mask = build_focusft_mask(seg);

  Rng rng(24);
  std::vector<int> tokens = random_tokens(rng, 8, cfg.vocab_size);
  std::vector<int> swapped = tokens;
  std::swap(swapped[1], swapped[4]);

  NoGradGuard no_grad;
  Tensor base = forward(w, tokens, mask);
  Tensor perm = forward(w, swapped, mask);
  const int v = cfg.vocab_size;
  for (int j = 0; j < v; ++j) {
    // Swapped context rows move with their tokens.
    CHECK(perm.values()[1 * v + j] == doctest::Approx(base.values()[4 * v + j]).epsilon(1e-9));
    CHECK(perm.values()[4 * v + j] == doctest::Approx(base.values()[1 * v + j]).epsilon(1e-9));
    // Response rows are unchanged (they see the same multiset of context).
    CHECK(perm.values()[6 * v + j] == doctest::Approx(base.values()[6 * v + j]).epsilon(1e-9));
    CHECK(perm.values()[7 * v + j] == doctest::Approx(base.values()[7 * v + j]).epsilon(1e-9));
  }
}

TEST_CASE("masked keys are unreachable in the attention op") {
  ModelConfig cfg = tiny_config(25);
  ModelWeights w = init_model(cfg);
  const int t = 5;
  Rng rng(26);
  Tensor h({t, cfg.d_model});
  for (double& v : h.values()) v = rng.normal();

  // Mask key column 3 from every query.
  Tensor mask = build_causal_mask(t);
  for (int i = 0; i < t; ++i) mask.values()[i * t + 3] = kMaskedLogit;
  std::vector<int> positions = {0, 1, 2, 3, 4};

  NoGradGuard no_grad;
  Tensor before = attention(h, w.layers[0], cfg, mask, nullptr, 0, &positions);
  for (int j = 0; j < cfg.d_model; ++j) h.values()[3 * cfg.d_model + j] += 17.0;
  Tensor after = attention(h, w.layers[0], cfg, mask, nullptr, 0, &positions);
  for (int i = 0; i < t; ++i) {
    if (i == 3) continue;  // its own query row changes through q_i
    for (int j = 0; j < cfg.d_model; ++j)
      CHECK(after.values()[i * cfg.d_model + j] ==
            doctest::Approx(before.values()[i * cfg.d_model + j]).epsilon(1e-12));
  }
}

TEST_CASE("attention trace rows sum to 1 over unmasked keys") {
  ModelConfig cfg = tiny_config(27);
  ModelWeights w = init_model(cfg);
  Rng rng(28);
  std::vector<int> tokens = random_tokens(rng, 10, cfg.vocab_size);
  AttentionTrace trace;
  trace.enabled = true;
  NoGradGuard no_grad;
  forward(w, tokens, build_causal_mask(10), nullptr, &trace);
  REQUIRE(trace.alpha.size() == static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    REQUIRE(trace.alpha[l].size() == static_cast<std::size_t>(cfg.n_heads));
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      for (int i = 0; i < 10; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 10; ++j) sum += trace.alpha[l][hd][i * 10 + j];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        for (int j = i + 1; j < 10; ++j) CHECK(trace.alpha[l][hd][i * 10 + j] == 0.0);
      }
    }
  }
}

TEST_CASE("response_cross_entropy values") {
  // Probability ~1 on the true tokens -> loss ~0.
  const int t = 3, v = 4;
  std::vector<int> tokens = {1, 2, 3};
  Tensor logits = Tensor::zeros({t, v});
  logits.values()[0 * v + 2] = 50.0;  // row 0 -> target tokens[1] = 2
  logits.values()[1 * v + 3] = 50.0;  // row 1 -> target tokens[2] = 3
  Tensor loss = response_cross_entropy(logits, tokens, {1, 2});
  CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-9));

  // Uniform logits -> ln V.
  Tensor uniform = Tensor::zeros({t, v});
  Tensor loss_u = response_cross_entropy(uniform, tokens, {1, 2});
  CHECK(loss_u.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // Two-term hand arithmetic.
  Tensor z = Tensor::zeros({t, v});
  z.values()[0 * v + 0] = 1.0;
  z.values()[1 * v + 3] = 2.0;
  double p1, p2;
  {
    const double d1 = std::exp(1.0) + 3.0;
    p1 = 1.0 / d1;  // target tokens[1] = 2, logit 0 against one logit 1
    const double d2 = std::exp(2.0) + 3.0;
    p2 = std::exp(2.0) / d2;  // target tokens[2] = 3, logit 2
  }
  Tensor loss_h = response_cross_entropy(z, tokens, {1, 2});
  CHECK(loss_h.item() ==
        doctest::Approx(-(std::log(p1) + std::log(p2)) / 2.0).epsilon(1e-9));

  CHECK_THROWS_AS(response_cross_entropy(logits, tokens, {}), TensorError);
  CHECK_THROWS_AS(response_cross_entropy(logits, tokens, {0}), TensorError);
}

TEST_CASE("full model gradient matches finite differences") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 24;
  cfg.vocab_size = 12;
  cfg.max_seq_len = 32;
  cfg.seed = 29;
  ModelWeights w = init_model(cfg);
  Rng rng(30);
  std::vector<int> tokens = random_tokens(rng, 12, cfg.vocab_size);
  std::vector<int> response = {8, 9, 10, 11};
  Tensor mask = build_causal_mask(12);

  w.zero_grads();
  {
    Tape tape;
    Tensor logits = forward(w, tokens, mask);
    Tensor loss = response_cross_entropy(logits, tokens, response);
    tape.backward(loss);
  }

  // Central differences over a deterministic subsample of each parameter.
  const double h = 1e-5;
  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& [name, p] : w.named_parameters()) {
    const std::size_t stride = std::max<std::size_t>(1, p->numel() / 7);
    for (std::size_t i = 0; i < p->numel(); i += stride) {
      const double saved = p->values()[i];
      p->values()[i] = saved + h;
      const double up =
          response_cross_entropy(forward(w, tokens, mask), tokens, response).item();
      p->values()[i] = saved - h;
      const double down =
          response_cross_entropy(forward(w, tokens, mask), tokens, response).item();
      p->values()[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double ad = p->grads()[i];
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
      worst = std::max(worst, std::abs(fd - ad) / denom);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig cfg = tiny_config(31);
  ModelWeights w = init_model(cfg);
  const std::string dir = "test_checkpoint_roundtrip";
  save_checkpoint(w, dir);
  ModelWeights loaded = load_checkpoint(dir);

  CHECK(loaded.config.n_layers == cfg.n_layers);
  CHECK(loaded.config.d_model == cfg.d_model);
  CHECK(loaded.embedding.values() == w.embedding.values());
  for (int l = 0; l < cfg.n_layers; ++l) {
    CHECK(loaded.layers[l].wq.values() == w.layers[l].wq.values());
    CHECK(loaded.layers[l].w2.values() == w.layers[l].w2.values());
    CHECK(loaded.layers[l].ffn_gain.values() == w.layers[l].ffn_gain.values());
  }

  // Same logits from the reloaded model.
  Rng rng(32);
  std::vector<int> tokens = random_tokens(rng, 5, cfg.vocab_size);
  NoGradGuard no_grad;
  Tensor a = forward(w, tokens, build_causal_mask(5));
  Tensor b = forward(loaded, tokens, build_causal_mask(5));
  CHECK(a.values() == b.values());
  std::filesystem::remove_all(dir);
}
