#include "focusft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace focusft {

namespace {

thread_local Tape* g_active_tape = nullptr;
long g_next_tape_id = 1;
bool g_finite_checks = true;

void check_finite(const Tensor& t, const char* op) {
  if (!g_finite_checks) return;
  for (double v : t.values()) {
    if (!std::isfinite(v)) fail_numerical(std::string(op) + ": non-finite value in output");
  }
}

// C (+)= A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (+)= A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// C (+)= A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int kk = 0; kk < k; ++kk) {
    const double* arow = a + static_cast<size_t>(kk) * m;
    const double* brow = b + static_cast<size_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

bool is_masked(double m) { return m <= kMaskedLogit; }

}  // namespace

void fail(const std::string& msg) { throw TensorError(msg); }
void fail_numerical(const std::string& msg) { throw NumericalAbort(msg); }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape_in, bool rg) {
  shape = std::move(shape_in);
  std::size_t n = 1;
  for (int d : shape) {
    check(d > 0, "Tensor: non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  data = std::make_shared<std::vector<double>>(n, 0.0);
  requires_grad = rg;
  if (rg) ensure_grad();
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values,
                         bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  check(values.size() == t.numel(), "Tensor::from_data: size mismatch");
  *t.data = std::move(values);
  return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  Tensor t({1}, requires_grad);
  (*t.data)[0] = value;
  return t;
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

double Tensor::item() const {
  check(numel() == 1, "Tensor::item: not a scalar");
  return (*data)[0];
}

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  t.requires_grad = false;
  t.tape_id = -1;
  return t;
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id++), prev_(g_active_tape) {
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& out, std::function<void()> back) {
  check(!frozen_, "Tape::record: tape is frozen");
  nodes_.push_back(Node{out, std::move(back)});
}

void Tape::backward(Tensor& root) {
  check(root.numel() == 1, "backward: root must be a scalar");
  check(root.tape_id == id_, "backward: root is not on the active tape");
  // Intermediates reset each sweep; leaves (never node outputs) accumulate.
  for (Node& n : nodes_) n.out.zero_grad();
  root.ensure_grad();
  (*root.grad)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out.grad) it->back();
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// ---- ops -------------------------------------------------------------------

namespace {

// Marks the output as recorded on the active tape. Must run before the
// backward closure is constructed: the closure captures a copy of `out`
// that has to share the already-allocated grad buffer.
void mark_out(Tensor& out) {
  Tape* t = Tape::active();
  out.requires_grad = true;
  out.ensure_grad();
  out.tape_id = t->id();
}

void record_op(Tensor& out, std::function<void()> back) {
  Tape::active()->record(out, std::move(back));
}

bool tracking(std::initializer_list<const Tensor*> parents) {
  if (!Tape::active()) return false;
  for (const Tensor* p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.shape.size() == 2 && b.shape.size() == 2, "matmul: expects matrices");
  check(a.shape[1] == b.shape[0], "matmul: inner dimensions differ");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out({m, n});
  gemm_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
  check_finite(out, "matmul");
  if (tracking({&a, &b})) {
    mark_out(out);
    record_op(out, [a, b, out]() {
      const double* g = out.grads().data();
      if (a.requires_grad)
        gemm_nt(g, b.values().data(), a.grad->data(), a.shape[0], b.shape[1],
                a.shape[1], true);
      if (b.requires_grad)
        gemm_tn(a.values().data(), g, b.grad->data(), b.shape[0], a.shape[0],
                b.shape[1], true);
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check(a.shape.size() == 2 && b.shape.size() == 2, "matmul_nt: expects matrices");
  check(a.shape[1] == b.shape[1], "matmul_nt: inner dimensions differ");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor out({m, n});
  gemm_nt(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
  check_finite(out, "matmul_nt");
  if (tracking({&a, &b})) {
    mark_out(out);
    record_op(out, [a, b, out]() {
      const double* g = out.grads().data();
      // dA += dC * B ; dB += dC^T * A
      if (a.requires_grad)
        gemm_nn(g, b.values().data(), a.grad->data(), a.shape[0], b.shape[0],
                b.shape[1], true);
      if (b.requires_grad)
        gemm_tn(g, a.values().data(), b.grad->data(), b.shape[0], a.shape[0],
                a.shape[1], true);
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape == b.shape, "add: shape mismatch");
  Tensor out(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  check_finite(out, "add");
  if (tracking({&a, &b})) {
    mark_out(out);
    record_op(out, [a, b, out]() {
      const std::size_t n2 = out.numel();
      if (a.requires_grad)
        for (std::size_t i = 0; i < n2; ++i) (*a.grad)[i] += (*out.grad)[i];
      if (b.requires_grad)
        for (std::size_t i = 0; i < n2; ++i) (*b.grad)[i] += (*out.grad)[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape == b.shape, "mul: shape mismatch");
  Tensor out(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  check_finite(out, "mul");
  if (tracking({&a, &b})) {
    mark_out(out);
    record_op(out, [a, b, out]() {
      const std::size_t n2 = out.numel();
      if (a.requires_grad)
        for (std::size_t i = 0; i < n2; ++i)
          (*a.grad)[i] += (*out.grad)[i] * (*b.data)[i];
      if (b.requires_grad)
        for (std::size_t i = 0; i < n2; ++i)
          (*b.grad)[i] += (*out.grad)[i] * (*a.data)[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
  check_finite(out, "scale");
  if (tracking({&a})) {
    mark_out(out);
    record_op(out, [a, out, c]() {
      const std::size_t n2 = out.numel();
      for (std::size_t i = 0; i < n2; ++i) (*a.grad)[i] += (*out.grad)[i] * c;
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out(x.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (*x.data)[i];
    (*out.data)[i] = v / (1.0 + std::exp(-v));
  }
  check_finite(out, "silu");
  if (tracking({&x})) {
    mark_out(out);
    record_op(out, [x, out]() {
      const std::size_t n2 = out.numel();
      for (std::size_t i = 0; i < n2; ++i) {
        const double v = (*x.data)[i];
        const double s = 1.0 / (1.0 + std::exp(-v));
        (*x.grad)[i] += (*out.grad)[i] * s * (1.0 + v * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  check(x.shape.size() == 2, "rms_norm: expects a matrix");
  const int rows = x.shape[0], d = x.shape[1];
  check(gain.numel() == static_cast<std::size_t>(d), "rms_norm: gain size mismatch");
  Tensor out(x.shape);
  std::vector<double> inv(rows);
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + static_cast<size_t>(r) * d;
    double ssq = 0.0;
    for (int i = 0; i < d; ++i) ssq += xr[i] * xr[i];
    inv[r] = 1.0 / std::sqrt(ssq / d + eps);
    double* yr = out.values().data() + static_cast<size_t>(r) * d;
    for (int i = 0; i < d; ++i) yr[i] = xr[i] * inv[r] * gain.values()[i];
  }
  check_finite(out, "rms_norm");
  if (tracking({&x, &gain})) {
    mark_out(out);
    record_op(out, [x, gain, out, inv, rows, d]() {
      for (int r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + static_cast<size_t>(r) * d;
        const double* gr = out.grads().data() + static_cast<size_t>(r) * d;
        const double iv = inv[r];
        if (gain.requires_grad) {
          for (int i = 0; i < d; ++i) (*gain.grad)[i] += gr[i] * xr[i] * iv;
        }
        if (x.requires_grad) {
          double dot = 0.0;
          for (int i = 0; i < d; ++i) dot += gr[i] * gain.values()[i] * xr[i];
          const double coef = iv * iv * iv * dot / d;
          double* xg = x.grad->data() + static_cast<size_t>(r) * d;
          for (int i = 0; i < d; ++i)
            xg[i] += gr[i] * gain.values()[i] * iv - coef * xr[i];
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& tokens) {
  check(table.shape.size() == 2, "embedding_lookup: table must be a matrix");
  const int v = table.shape[0], d = table.shape[1];
  const int t = static_cast<int>(tokens.size());
  for (int tok : tokens)
    check(tok >= 0 && tok < v, "embedding_lookup: token id out of range");
  Tensor out({t, d});
  for (int i = 0; i < t; ++i)
    std::memcpy(out.values().data() + static_cast<size_t>(i) * d,
                table.values().data() + static_cast<size_t>(tokens[i]) * d,
                sizeof(double) * d);
  if (tracking({&table})) {
    mark_out(out);
    record_op(out, [table, out, tokens, d]() {
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const double* g = out.grads().data() + i * d;
        double* tg = table.grad->data() + static_cast<size_t>(tokens[i]) * d;
        for (int j = 0; j < d; ++j) tg[j] += g[j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  check(x.shape.size() == 2, "slice_cols: expects a matrix");
  const int rows = x.shape[0], cols = x.shape[1];
  check(start >= 0 && len > 0 && start + len <= cols, "slice_cols: bad range");
  Tensor out({rows, len});
  for (int r = 0; r < rows; ++r)
    std::memcpy(out.values().data() + static_cast<size_t>(r) * len,
                x.values().data() + static_cast<size_t>(r) * cols + start,
                sizeof(double) * len);
  if (tracking({&x})) {
    mark_out(out);
    record_op(out, [x, out, start, len, rows, cols]() {
      for (int r = 0; r < rows; ++r) {
        const double* g = out.grads().data() + static_cast<size_t>(r) * len;
        double* xg = x.grad->data() + static_cast<size_t>(r) * cols + start;
        for (int j = 0; j < len; ++j) xg[j] += g[j];
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int rows = parts[0].shape[0];
  int total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    check(p.shape.size() == 2 && p.shape[0] == rows, "concat_cols: row mismatch");
    total += p.shape[1];
    any_grad = any_grad || p.requires_grad;
  }
  Tensor out({rows, total});
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.shape[1];
    for (int r = 0; r < rows; ++r)
      std::memcpy(out.values().data() + static_cast<size_t>(r) * total + off,
                  p.values().data() + static_cast<size_t>(r) * w,
                  sizeof(double) * w);
    off += w;
  }
  if (Tape::active() && any_grad) {
    mark_out(out);
    record_op(out, [parts, out, rows, total]() {
      int o = 0;
      for (const Tensor& p : parts) {
        const int w = p.shape[1];
        if (p.requires_grad) {
          for (int r = 0; r < rows; ++r) {
            const double* g = out.grads().data() + static_cast<size_t>(r) * total + o;
            double* pg = p.grad->data() + static_cast<size_t>(r) * w;
            for (int j = 0; j < w; ++j) pg[j] += g[j];
          }
        }
        o += w;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum_all");
  if (tracking({&x})) {
    mark_out(out);
    record_op(out, [x, out]() {
      const double g = out.grads()[0];
      for (double& v : *x.grad) v += g;
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits, const Tensor& mask) {
  check(logits.shape.size() == 2, "softmax_rows: expects a matrix");
  check(logits.shape == mask.shape, "softmax_rows: mask shape mismatch");
  const int rows = logits.shape[0], cols = logits.shape[1];
  for (double m : mask.values())
    check(m == 0.0 || is_masked(m), "softmax_rows: mask entries must be 0 or -inf");
  Tensor out(logits.shape);
  for (int r = 0; r < rows; ++r) {
    const double* z = logits.values().data() + static_cast<size_t>(r) * cols;
    const double* m = mask.values().data() + static_cast<size_t>(r) * cols;
    double* y = out.values().data() + static_cast<size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j)
      if (!is_masked(m[j])) mx = std::max(mx, z[j]);
    check(std::isfinite(mx), "softmax_rows: fully masked row");
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = is_masked(m[j]) ? 0.0 : std::exp(z[j] - mx);
      denom += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= denom;
  }
  check_finite(out, "softmax_rows");
  if (tracking({&logits})) {
    mark_out(out);
    record_op(out, [logits, mask, out, rows, cols]() {
      for (int r = 0; r < rows; ++r) {
        const double* y = out.values().data() + static_cast<size_t>(r) * cols;
        const double* g = out.grads().data() + static_cast<size_t>(r) * cols;
        const double* m = mask.values().data() + static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
        double* zg = logits.grad->data() + static_cast<size_t>(r) * cols;
        for (int j = 0; j < cols; ++j)
          if (!is_masked(m[j])) zg[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor rope(const Tensor& x, const std::vector<int>& positions, double base) {
  check(x.shape.size() == 2, "rope: expects a matrix");
  const int rows = x.shape[0], d = x.shape[1];
  check(d % 2 == 0, "rope: head dimension must be even");
  check(static_cast<int>(positions.size()) == rows, "rope: positions size mismatch");
  Tensor out(x.shape);
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + static_cast<size_t>(r) * d;
    double* yr = out.values().data() + static_cast<size_t>(r) * d;
    for (int i = 0; i < d / 2; ++i) {
      const double freq = std::pow(base, -2.0 * i / d);
      const double phi = positions[r] * freq;
      const double c = std::cos(phi), s = std::sin(phi);
      yr[2 * i] = xr[2 * i] * c - xr[2 * i + 1] * s;
      yr[2 * i + 1] = xr[2 * i] * s + xr[2 * i + 1] * c;
    }
  }
  check_finite(out, "rope");
  if (tracking({&x})) {
    mark_out(out);
    record_op(out, [x, out, positions, base, rows, d]() {
      // Backward of a rotation is the inverse rotation applied to the grad.
      for (int r = 0; r < rows; ++r) {
        const double* g = out.grads().data() + static_cast<size_t>(r) * d;
        double* xg = x.grad->data() + static_cast<size_t>(r) * d;
        for (int i = 0; i < d / 2; ++i) {
          const double freq = std::pow(base, -2.0 * i / d);
          const double phi = positions[r] * freq;
          const double c = std::cos(phi), s = std::sin(phi);
          xg[2 * i] += g[2 * i] * c + g[2 * i + 1] * s;
          xg[2 * i + 1] += -g[2 * i] * s + g[2 * i + 1] * c;
        }
      }
    });
  }
  return out;
}

// ---- gradient utilities ------------------------------------------------

double clip_grad_norm(const std::vector<Tensor*>& params, double max_norm) {
  double ssq = 0.0;
  for (const Tensor* p : params) {
    if (!p->grad) continue;
    for (double g : p->grads()) ssq += g * g;
  }
  const double norm = std::sqrt(ssq);
  if (norm > max_norm && norm > 0.0) {
    const double sc = max_norm / norm;
    for (Tensor* p : params) {
      if (!p->grad) continue;
      for (double& g : *p->grad) g *= sc;
    }
  }
  return norm;
}

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.kind = Kind::Sgd;
  s.lr = lr;
  return s;
}

OptimizerState OptimizerState::adamw(double lr, double beta1, double beta2,
                                     double weight_decay) {
  OptimizerState s;
  s.kind = Kind::AdamW;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.weight_decay = weight_decay;
  return s;
}

void OptimizerState::apply(const std::vector<Tensor*>& params) {
  if (kind == Kind::AdamW && moment1.empty()) {
    for (const Tensor* p : params) {
      moment1.emplace_back(p->numel(), 0.0);
      moment2.emplace_back(p->numel(), 0.0);
    }
  }
  if (kind == Kind::AdamW) {
    check(moment1.size() == params.size(), "optimizer_apply: state size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
      check(moment1[i].size() == params[i]->numel(),
            "optimizer_apply: moment shape mismatch");
  }
  ++step_count;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    if (!p->grad) continue;
    double* w = p->values().data();
    const double* g = p->grads().data();
    const std::size_t n = p->numel();
    if (kind == Kind::Sgd) {
      for (std::size_t i = 0; i < n; ++i) w[i] -= lr * g[i];
    } else {
      double* m = moment1[pi].data();
      double* v = moment2[pi].data();
      const double bc1 = 1.0 - std::pow(beta1, step_count);
      const double bc2 = 1.0 - std::pow(beta2, step_count);
      for (std::size_t i = 0; i < n; ++i) {
        w[i] -= lr * weight_decay * w[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
}

}  // namespace focusft
