#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace focusft {

class Tape;

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
// Data and grad are shared: copying a Tensor aliases the same storage, which
// is how tape nodes keep handles to the values they need for backward.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;
  bool requires_grad = false;
  long tape_id = -1;  // tape that recorded the producing op; -1 for leaves

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, bool requires_grad = false);

  static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  std::size_t numel() const;
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool defined() const { return static_cast<bool>(data); }

  std::vector<double>& values() { return *data; }
  const std::vector<double>& values() const { return *data; }
  double item() const;

  void ensure_grad();
  void zero_grad();
  std::vector<double>& grads() { return *grad; }
  const std::vector<double>& grads() const { return *grad; }

  // Value copy with no grad, no tape linkage.
  Tensor detached() const;
};

// Append-only record of operations. At most one tape is active per thread;
// activation is scoped to the Tape object's lifetime (nesting restores the
// previous tape). Ops record a node only when the output requires grad.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  long id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  void record(const Tensor& out, std::function<void()> back);

  // Seeds d(root)/d(root) = 1 and sweeps nodes in reverse topological order.
  // Leaf grads accumulate across calls; intermediate grads are reset first.
  void backward(Tensor& root);

  static Tape* active();

 private:
  struct Node {
    Tensor out;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  bool frozen_ = false;
  long id_;
  Tape* prev_;
};

// Temporarily disables recording (pure inference passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();

 private:
  Tape* saved_;
};

// NaN/Inf detection after every forward op. On by default; timing runs turn
// it off.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

class TensorError : public std::exception {
 public:
  explicit TensorError(std::string msg) : msg_(std::move(msg)) {}
  const char* what() const noexcept override { return msg_.c_str(); }

 private:
  std::string msg_;
};

// Non-finite values detected during compute (forward outputs or losses).
// Distinct so callers can map it to the numerical-abort exit path.
class NumericalAbort : public TensorError {
 public:
  using TensorError::TensorError;
};

[[noreturn]] void fail(const std::string& msg);
[[noreturn]] void fail_numerical(const std::string& msg);
inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// ---- differentiable ops -------------------------------------------------

// Entries at or below this threshold in a mask tensor are treated as -inf.
inline constexpr double kMaskedLogit = -1e9;

Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * transpose(b[n x k]) -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor silu(const Tensor& x);
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-8);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& tokens);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum_all(const Tensor& x);

// Row softmax over unmasked entries only; masked entries are exactly 0 in the
// output. mask entries must be 0 (visible) or kMaskedLogit (hidden).
Tensor softmax_rows(const Tensor& logits, const Tensor& mask);

// Rotary embedding over pairs (2i, 2i+1) with frequencies base^(-2i/d).
Tensor rope(const Tensor& x, const std::vector<int>& positions, double base);

// ---- gradient utilities --------------------------------------------------

// Clips in place to max_norm; returns the pre-clip global L2 norm.
double clip_grad_norm(const std::vector<Tensor*>& params, double max_norm);

struct OptimizerState {
  enum class Kind { Sgd, AdamW };
  Kind kind = Kind::Sgd;
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long step_count = 0;
  std::vector<std::vector<double>> moment1;
  std::vector<std::vector<double>> moment2;

  static OptimizerState sgd(double lr);
  static OptimizerState adamw(double lr, double beta1, double beta2,
                              double weight_decay);

  // One update over the parameter list; grads must be populated.
  void apply(const std::vector<Tensor*>& params);
};

}  // namespace focusft
