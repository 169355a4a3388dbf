#pragma once

#include <vector>

#include "cifm/tensor.hpp"

// Dense compute kernels. Every data-parallel kernel comes in two builds:
// a plain-loop serial reference (kernels::serial) and an OpenMP variant
// (kernels::omp) that splits work across rows. Both compute each output
// element with the same operation order, so results are bit-identical;
// tests/test_kernels.cpp holds them to exact equality and bench/ compares
// their throughput. The unqualified functions dispatch on a global flag.

namespace cifm::kernels {

bool parallel_enabled() noexcept;
void set_parallel(bool on) noexcept;

namespace serial {

// out(m×n) = A(m×k) · B(k×n); accumulate adds instead of overwriting.
void matmul_nn(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
// out(m×n) = A(m×k) · B(n×k)^T
void matmul_nt(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
// out(k×n) = A(m×k)^T · B(m×n)
void matmul_tn(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);

void add_bias_rows(Matrix& x, const Matrix& bias);        // bias is 1×n
void col_sums(const Matrix& x, Matrix& out);              // out is 1×n
void softmax_rows(const Matrix& x, Matrix& out);
void logsumexp_rows(const Matrix& x, Matrix& out);        // out is m×1
void l2_normalize_rows(const Matrix& x, Matrix& out, Matrix& inv_norms, double eps);

// y = gain ⊙ (x − μ_row)/σ_row + bias; caches normalized rows and 1/σ.
void layernorm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                    Matrix& out, Matrix& xhat, Matrix& inv_std);
void layernorm_rows_backward(const Matrix& dout, const Matrix& gain, const Matrix& xhat,
                             const Matrix& inv_std, Matrix& dx, Matrix& dgain, Matrix& dbias);

void gather_rows(const Matrix& table, const std::vector<int32_t>& ids, Matrix& out);

// Multi-head scaled dot-product attention over a batch of sequences laid out
// as (batch*len)×dim. key_mask is batch×len with 1 for valid positions.
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       const IntMatrix& key_mask, int batch, int len, int heads,
                       Matrix& context, Matrix& probs);
void attention_backward(const Matrix& dcontext, const Matrix& q, const Matrix& k,
                        const Matrix& v, const Matrix& probs, int batch, int len, int heads,
                        Matrix& dq, Matrix& dk, Matrix& dv);

}  // namespace serial

namespace omp {

void matmul_nn(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
void matmul_nt(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
void matmul_tn(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
void add_bias_rows(Matrix& x, const Matrix& bias);
void col_sums(const Matrix& x, Matrix& out);
void softmax_rows(const Matrix& x, Matrix& out);
void logsumexp_rows(const Matrix& x, Matrix& out);
void l2_normalize_rows(const Matrix& x, Matrix& out, Matrix& inv_norms, double eps);
void layernorm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                    Matrix& out, Matrix& xhat, Matrix& inv_std);
void layernorm_rows_backward(const Matrix& dout, const Matrix& gain, const Matrix& xhat,
                             const Matrix& inv_std, Matrix& dx, Matrix& dgain, Matrix& dbias);
void gather_rows(const Matrix& table, const std::vector<int32_t>& ids, Matrix& out);
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       const IntMatrix& key_mask, int batch, int len, int heads,
                       Matrix& context, Matrix& probs);
void attention_backward(const Matrix& dcontext, const Matrix& q, const Matrix& k,
                        const Matrix& v, const Matrix& probs, int batch, int len, int heads,
                        Matrix& dq, Matrix& dk, Matrix& dv);

}  // namespace omp

// Dispatching entry points used by the rest of the library.
void matmul_nn(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
void matmul_nt(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
void matmul_tn(const Matrix& A, const Matrix& B, Matrix& out, bool accumulate = false);
void add_bias_rows(Matrix& x, const Matrix& bias);
void col_sums(const Matrix& x, Matrix& out);
void softmax_rows(const Matrix& x, Matrix& out);
void logsumexp_rows(const Matrix& x, Matrix& out);
void l2_normalize_rows(const Matrix& x, Matrix& out, Matrix& inv_norms, double eps);
void layernorm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                    Matrix& out, Matrix& xhat, Matrix& inv_std);
void layernorm_rows_backward(const Matrix& dout, const Matrix& gain, const Matrix& xhat,
                             const Matrix& inv_std, Matrix& dx, Matrix& dgain, Matrix& dbias);
void gather_rows(const Matrix& table, const std::vector<int32_t>& ids, Matrix& out);
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       const IntMatrix& key_mask, int batch, int len, int heads,
                       Matrix& context, Matrix& probs);
void attention_backward(const Matrix& dcontext, const Matrix& q, const Matrix& k,
                        const Matrix& v, const Matrix& probs, int batch, int len, int heads,
                        Matrix& dq, Matrix& dk, Matrix& dv);

// Scatter-add of row gradients back into an embedding table. Rows of the
// table alias across ids, so this one stays serial.
void scatter_add_rows(Matrix& table, const std::vector<int32_t>& ids, const Matrix& grads);

// Deterministic total sum: per-row partials combined in row order, so the
// result does not depend on the thread count.
double sum_all(const Matrix& x);

}  // namespace cifm::kernels
