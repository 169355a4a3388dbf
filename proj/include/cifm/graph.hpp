// Tape-based reverse-mode automatic differentiation over Matrix values.
//
// A Tape owns every intermediate value of one forward pass.  Ops append a
// closure that, on backward(), pushes gradients from the op output into the
// op inputs.  Parameter leaves carry a pointer to an external gradient
// matrix; backward() accumulates into it, so a model can keep its weights
// and gradient buffers outside the tape and rebuild the graph every step.
//
// Everything is double precision so finite-difference checks can resolve
// relative errors well below 1e-4.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cifm/tensor.hpp"

namespace cifm {

class Tape {
 public:
  // Value that does not receive harvested gradients (inputs, constants).
  int input(Matrix v);

  // Parameter leaf: after backward(), the slot gradient is added into
  // *external_grad (which must match v's shape).
  int param(Matrix v, Matrix* external_grad);

  // Allocates an op output slot; used by the op constructors in graph ops.
  int alloc(Matrix v);

  const Matrix& val(int id) const { return slots_[id].val; }
  Matrix& val(int id) { return slots_[id].val; }
  Matrix& grad(int id) { return slots_[id].grad; }
  double scalar(int id) const;

  void push_op(std::function<void()> op) { ops_.push_back(std::move(op)); }

  // Seeds d(root)/d(root) = 1 (root must be 1x1), replays ops in reverse and
  // harvests parameter gradients into their external buffers.
  void backward(int root);

  size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    Matrix val;
    Matrix grad;
    Matrix* external = nullptr;
  };
  std::vector<Slot> slots_;
  std::vector<std::function<void()>> ops_;
};

namespace graph {

// Dense algebra.
int matmul(Tape& t, int a, int b);     // A(m,k) · B(k,n)
int matmul_nt(Tape& t, int a, int b);  // A(m,k) · B(n,k)^T
int affine(Tape& t, int x, int w, int b);  // x·W + bias (bias is 1×n)
int add(Tape& t, int a, int b);
int sub(Tape& t, int a, int b);
int scale(Tape& t, int a, double c);
int add_const(Tape& t, int a, double c);

// Pointwise nonlinearities.
int relu(Tape& t, int a);
int gelu(Tape& t, int a);

// Inverted dropout with a stateless per-call seed; identity when !train.
int dropout(Tape& t, int a, double rate, uint64_t seed, bool train);

// Lookup table ops.  ids index rows of the table value.
int embedding(Tape& t, int table, const std::vector<int32_t>& ids);

// x has batch*len rows; adds pos.row(j) to every row (n*len + j).
int add_position_rows(Tape& t, int x, int pos, int batch, int len);

// Pooling over token rows (x has batch*len rows; outputs batch rows).
int masked_mean_pool(Tape& t, int x, const IntMatrix& mask, int batch, int len);
int first_token_pool(Tape& t, int x, int batch, int len);

// Normalisation.
int layernorm(Tape& t, int x, int gain, int bias, double eps = 1e-5);
int l2_normalize(Tape& t, int x, double eps = 1e-12);

// Multi-head scaled dot-product attention over packed token rows.
int attention(Tape& t, int q, int k, int v, const IntMatrix& key_mask, int batch, int len,
              int heads);

// Shape plumbing.
int take_diag(Tape& t, int a);        // (n,n) -> (n,1)
int logsumexp_rows(Tape& t, int a);   // (n,m) -> (n,1)
int mean_all(Tape& t, int a);         // (n,m) -> (1,1)
int concat_cols(Tape& t, int a, int b);
int permute_rows(Tape& t, int a, const std::vector<int>& perm);

// log(mean(exp(a)))) over an (n,1) column.  The backward pass uses the
// supplied log-space running mean instead of the batch value, which keeps
// the gradient of the partition term unbiased across steps; passing the
// batch value itself recovers the exact gradient.
int log_mean_exp_ema(Tape& t, int a, double log_ema);

// Scalar losses.
int cross_entropy_mean(Tape& t, int logits, const std::vector<int32_t>& labels);
int mse_mean(Tape& t, int pred, const Matrix& target);

// One-layer text CNN head: slide a width-`width` window over token rows,
// ReLU, then max-pool over positions.  w is (filters, width*dim), b is
// (1, filters); output is (batch, filters).
int conv_text_pool(Tape& t, int x, int w, int b, int batch, int len, int width);

}  // namespace graph
}  // namespace cifm
