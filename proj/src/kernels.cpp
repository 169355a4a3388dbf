#include "cifm/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace cifm {

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t checksum(const Matrix& m) {
  uint64_t h = fnv1a(&m.rows, sizeof(m.rows));
  h = fnv1a(&m.cols, sizeof(m.cols), h);
  return fnv1a(m.a.data(), m.a.size() * sizeof(double), h);
}

}  // namespace cifm

namespace cifm::kernels {

namespace {

std::atomic<bool> g_parallel{true};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---- per-row bodies shared by the serial reference and the OpenMP build ----

inline void matmul_nn_row(const Matrix& A, const Matrix& B, Matrix& out, bool acc, int i) {
  double* o = out.row(i);
  if (!acc) std::fill(o, o + out.cols, 0.0);
  const double* arow = A.row(i);
  for (int p = 0; p < A.cols; ++p) {
    const double apv = arow[p];
    const double* brow = B.row(p);
    for (int j = 0; j < B.cols; ++j) o[j] += apv * brow[j];
  }
}

inline void matmul_nt_row(const Matrix& A, const Matrix& B, Matrix& out, bool acc, int i) {
  const double* arow = A.row(i);
  double* o = out.row(i);
  for (int j = 0; j < B.rows; ++j) {
    const double* brow = B.row(j);
    double s = 0.0;
    for (int p = 0; p < A.cols; ++p) s += arow[p] * brow[p];
    o[j] = acc ? o[j] + s : s;
  }
}

// out(k×n) = A(m×k)^T · B(m×n): row p of out gathers column p of A.
inline void matmul_tn_row(const Matrix& A, const Matrix& B, Matrix& out, bool acc, int p) {
  double* o = out.row(p);
  if (!acc) std::fill(o, o + out.cols, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    const double apv = A.at(i, p);
    if (apv == 0.0) continue;
    const double* brow = B.row(i);
    for (int j = 0; j < B.cols; ++j) o[j] += apv * brow[j];
  }
}

inline void softmax_row(const Matrix& x, Matrix& out, int i) {
  const double* xr = x.row(i);
  double* o = out.row(i);
  double mx = kNegInf;
  for (int j = 0; j < x.cols; ++j) mx = std::max(mx, xr[j]);
  double z = 0.0;
  for (int j = 0; j < x.cols; ++j) {
    o[j] = std::exp(xr[j] - mx);
    z += o[j];
  }
  const double inv = 1.0 / z;
  for (int j = 0; j < x.cols; ++j) o[j] *= inv;
}

inline void logsumexp_row(const Matrix& x, Matrix& out, int i) {
  const double* xr = x.row(i);
  double mx = kNegInf;
  for (int j = 0; j < x.cols; ++j) mx = std::max(mx, xr[j]);
  double z = 0.0;
  for (int j = 0; j < x.cols; ++j) z += std::exp(xr[j] - mx);
  out.at(i, 0) = mx + std::log(z);
}

inline void l2norm_row(const Matrix& x, Matrix& out, Matrix& inv_norms, double eps, int i) {
  const double* xr = x.row(i);
  double* o = out.row(i);
  double s = 0.0;
  for (int j = 0; j < x.cols; ++j) s += xr[j] * xr[j];
  const double inv = 1.0 / std::max(std::sqrt(s), eps);
  inv_norms.at(i, 0) = inv;
  for (int j = 0; j < x.cols; ++j) o[j] = xr[j] * inv;
}

inline void layernorm_row(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                          Matrix& out, Matrix& xhat, Matrix& inv_std, int i) {
  const int n = x.cols;
  const double* xr = x.row(i);
  double mean = 0.0;
  for (int j = 0; j < n; ++j) mean += xr[j];
  mean /= n;
  double var = 0.0;
  for (int j = 0; j < n; ++j) {
    const double d = xr[j] - mean;
    var += d * d;
  }
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  inv_std.at(i, 0) = inv;
  double* h = xhat.row(i);
  double* o = out.row(i);
  const double* g = gain.row(0);
  const double* b = bias.row(0);
  for (int j = 0; j < n; ++j) {
    h[j] = (xr[j] - mean) * inv;
    o[j] = g[j] * h[j] + b[j];
  }
}

inline void layernorm_bwd_row(const Matrix& dout, const Matrix& gain, const Matrix& xhat,
                              const Matrix& inv_std, Matrix& dx, int i) {
  const int n = dout.cols;
  const double* dy = dout.row(i);
  const double* g = gain.row(0);
  const double* h = xhat.row(i);
  double* dxi = dx.row(i);
  double m1 = 0.0, m2 = 0.0;
  for (int j = 0; j < n; ++j) {
    const double t = dy[j] * g[j];
    m1 += t;
    m2 += t * h[j];
  }
  m1 /= n;
  m2 /= n;
  const double inv = inv_std.at(i, 0);
  for (int j = 0; j < n; ++j) dxi[j] = inv * (dy[j] * g[j] - m1 - h[j] * m2);
}

// One sample, all heads. probs rows are laid out ((n*heads + h)*len + i).
inline void attention_fwd_sample(const Matrix& q, const Matrix& k, const Matrix& v,
                                 const IntMatrix& key_mask, int len, int heads,
                                 Matrix& context, Matrix& probs, int n) {
  const int dim = q.cols;
  const int hd = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const int base = n * len;
  for (int h = 0; h < heads; ++h) {
    const int off = h * hd;
    for (int i = 0; i < len; ++i) {
      double* prow = probs.row((n * heads + h) * len + i);
      const double* qi = q.row(base + i) + off;
      double mx = kNegInf;
      for (int j = 0; j < len; ++j) {
        if (!key_mask.at(n, j)) {
          prow[j] = kNegInf;
          continue;
        }
        const double* kj = k.row(base + j) + off;
        double s = 0.0;
        for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
        prow[j] = s * scale;
        mx = std::max(mx, prow[j]);
      }
      double z = 0.0;
      for (int j = 0; j < len; ++j) {
        prow[j] = (prow[j] == kNegInf) ? 0.0 : std::exp(prow[j] - mx);
        z += prow[j];
      }
      const double inv = z > 0.0 ? 1.0 / z : 0.0;
      double* crow = context.row(base + i) + off;
      std::fill(crow, crow + hd, 0.0);
      for (int j = 0; j < len; ++j) {
        prow[j] *= inv;
        if (prow[j] == 0.0) continue;
        const double* vj = v.row(base + j) + off;
        for (int d = 0; d < hd; ++d) crow[d] += prow[j] * vj[d];
      }
    }
  }
}

inline void attention_bwd_sample(const Matrix& dcontext, const Matrix& q, const Matrix& k,
                                 const Matrix& v, const Matrix& probs, int len, int heads,
                                 Matrix& dq, Matrix& dk, Matrix& dv, int n) {
  const int dim = q.cols;
  const int hd = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const int base = n * len;
  for (int i = 0; i < len; ++i) {
    std::fill(dq.row(base + i), dq.row(base + i) + dim, 0.0);
    std::fill(dk.row(base + i), dk.row(base + i) + dim, 0.0);
    std::fill(dv.row(base + i), dv.row(base + i) + dim, 0.0);
  }
  std::vector<double> dscore(len);
  for (int h = 0; h < heads; ++h) {
    const int off = h * hd;
    for (int i = 0; i < len; ++i) {
      const double* prow = probs.row((n * heads + h) * len + i);
      const double* dci = dcontext.row(base + i) + off;
      // dV += P^T dC and dP = dC · V^T, row by row.
      double dot = 0.0;
      for (int j = 0; j < len; ++j) {
        const double* vj = v.row(base + j) + off;
        double dp = 0.0;
        for (int d = 0; d < hd; ++d) dp += dci[d] * vj[d];
        dscore[j] = dp;
        dot += dp * prow[j];
        double* dvj = dv.row(base + j) + off;
        for (int d = 0; d < hd; ++d) dvj[d] += prow[j] * dci[d];
      }
      // Softmax backward, then chain to q and k.
      double* dqi = dq.row(base + i) + off;
      const double* qi = q.row(base + i) + off;
      for (int j = 0; j < len; ++j) {
        const double ds = prow[j] * (dscore[j] - dot) * scale;
        if (ds == 0.0) continue;
        const double* kj = k.row(base + j) + off;
        double* dkj = dk.row(base + j) + off;
        for (int d = 0; d < hd; ++d) {
          dqi[d] += ds * kj[d];
          dkj[d] += ds * qi[d];
        }
      }
    }
  }
}

inline void layernorm_param_grads(const Matrix& dout, const Matrix& xhat, Matrix& dgain,
                                  Matrix& dbias) {
  for (int i = 0; i < dout.rows; ++i) {
    const double* dy = dout.row(i);
    const double* h = xhat.row(i);
    double* dg = dgain.row(0);
    double* db = dbias.row(0);
    for (int j = 0; j < dout.cols; ++j) {
      dg[j] += dy[j] * h[j];
      db[j] += dy[j];
    }
  }
}

}  // namespace

bool parallel_enabled() noexcept { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) noexcept { g_parallel.store(on, std::memory_order_relaxed); }

// ---------------------------------------------------------------- serial --

namespace serial {

void matmul_nn(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
  for (int i = 0; i < A.rows; ++i) matmul_nn_row(A, B, out, acc, i);
}

void matmul_nt(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
  for (int i = 0; i < A.rows; ++i) matmul_nt_row(A, B, out, acc, i);
}

void matmul_tn(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
  for (int p = 0; p < A.cols; ++p) matmul_tn_row(A, B, out, acc, p);
}

void add_bias_rows(Matrix& x, const Matrix& bias) {
  for (int i = 0; i < x.rows; ++i) {
    double* r = x.row(i);
    const double* b = bias.row(0);
    for (int j = 0; j < x.cols; ++j) r[j] += b[j];
  }
}

void col_sums(const Matrix& x, Matrix& out) {
  out.zero();
  for (int i = 0; i < x.rows; ++i) {
    const double* r = x.row(i);
    double* o = out.row(0);
    for (int j = 0; j < x.cols; ++j) o[j] += r[j];
  }
}

void softmax_rows(const Matrix& x, Matrix& out) {
  for (int i = 0; i < x.rows; ++i) softmax_row(x, out, i);
}

void logsumexp_rows(const Matrix& x, Matrix& out) {
  for (int i = 0; i < x.rows; ++i) logsumexp_row(x, out, i);
}

void l2_normalize_rows(const Matrix& x, Matrix& out, Matrix& inv_norms, double eps) {
  for (int i = 0; i < x.rows; ++i) l2norm_row(x, out, inv_norms, eps, i);
}

void layernorm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                    Matrix& out, Matrix& xhat, Matrix& inv_std) {
  for (int i = 0; i < x.rows; ++i) layernorm_row(x, gain, bias, eps, out, xhat, inv_std, i);
}

void layernorm_rows_backward(const Matrix& dout, const Matrix& gain, const Matrix& xhat,
                             const Matrix& inv_std, Matrix& dx, Matrix& dgain, Matrix& dbias) {
  for (int i = 0; i < dout.rows; ++i) layernorm_bwd_row(dout, gain, xhat, inv_std, dx, i);
  layernorm_param_grads(dout, xhat, dgain, dbias);
}

void gather_rows(const Matrix& table, const std::vector<int32_t>& ids, Matrix& out) {
  for (size_t r = 0; r < ids.size(); ++r) {
    const double* src = table.row(ids[r]);
    std::copy(src, src + table.cols, out.row(static_cast<int>(r)));
  }
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       const IntMatrix& key_mask, int batch, int len, int heads,
                       Matrix& context, Matrix& probs) {
  for (int n = 0; n < batch; ++n)
    attention_fwd_sample(q, k, v, key_mask, len, heads, context, probs, n);
}

void attention_backward(const Matrix& dcontext, const Matrix& q, const Matrix& k,
                        const Matrix& v, const Matrix& probs, int batch, int len, int heads,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
  for (int n = 0; n < batch; ++n)
    attention_bwd_sample(dcontext, q, k, v, probs, len, heads, dq, dk, dv, n);
}

}  // namespace serial

// ------------------------------------------------------------------- omp --

namespace omp {

void matmul_nn(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < A.rows; ++i) matmul_nn_row(A, B, out, acc, i);
}

void matmul_nt(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < A.rows; ++i) matmul_nt_row(A, B, out, acc, i);
}

void matmul_tn(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < A.cols; ++p) matmul_tn_row(A, B, out, acc, p);
}

void add_bias_rows(Matrix& x, const Matrix& bias) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.rows; ++i) {
    double* r = x.row(i);
    const double* b = bias.row(0);
    for (int j = 0; j < x.cols; ++j) r[j] += b[j];
  }
}

void col_sums(const Matrix& x, Matrix& out) {
  // Column reduction; row order fixed to keep results identical to serial.
  serial::col_sums(x, out);
}

void softmax_rows(const Matrix& x, Matrix& out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.rows; ++i) softmax_row(x, out, i);
}

void logsumexp_rows(const Matrix& x, Matrix& out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.rows; ++i) logsumexp_row(x, out, i);
}

void l2_normalize_rows(const Matrix& x, Matrix& out, Matrix& inv_norms, double eps) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.rows; ++i) l2norm_row(x, out, inv_norms, eps, i);
}

void layernorm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                    Matrix& out, Matrix& xhat, Matrix& inv_std) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.rows; ++i) layernorm_row(x, gain, bias, eps, out, xhat, inv_std, i);
}

void layernorm_rows_backward(const Matrix& dout, const Matrix& gain, const Matrix& xhat,
                             const Matrix& inv_std, Matrix& dx, Matrix& dgain, Matrix& dbias) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < dout.rows; ++i) layernorm_bwd_row(dout, gain, xhat, inv_std, dx, i);
  layernorm_param_grads(dout, xhat, dgain, dbias);
}

void gather_rows(const Matrix& table, const std::vector<int32_t>& ids, Matrix& out) {
  const int n = static_cast<int>(ids.size());
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    const double* src = table.row(ids[r]);
    std::copy(src, src + table.cols, out.row(r));
  }
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       const IntMatrix& key_mask, int batch, int len, int heads,
                       Matrix& context, Matrix& probs) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < batch; ++n)
    attention_fwd_sample(q, k, v, key_mask, len, heads, context, probs, n);
}

void attention_backward(const Matrix& dcontext, const Matrix& q, const Matrix& k,
                        const Matrix& v, const Matrix& probs, int batch, int len, int heads,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < batch; ++n)
    attention_bwd_sample(dcontext, q, k, v, probs, len, heads, dq, dk, dv, n);
}

}  // namespace omp

// -------------------------------------------------------------- dispatch --

#define CIFM_DISPATCH(fn, ...) \
  (parallel_enabled() ? omp::fn(__VA_ARGS__) : serial::fn(__VA_ARGS__))

void matmul_nn(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
  CIFM_DISPATCH(matmul_nn, A, B, out, acc);
}
void matmul_nt(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
  CIFM_DISPATCH(matmul_nt, A, B, out, acc);
}
void matmul_tn(const Matrix& A, const Matrix& B, Matrix& out, bool acc) {
  CIFM_DISPATCH(matmul_tn, A, B, out, acc);
}
void add_bias_rows(Matrix& x, const Matrix& bias) { CIFM_DISPATCH(add_bias_rows, x, bias); }
void col_sums(const Matrix& x, Matrix& out) { CIFM_DISPATCH(col_sums, x, out); }
void softmax_rows(const Matrix& x, Matrix& out) { CIFM_DISPATCH(softmax_rows, x, out); }
void logsumexp_rows(const Matrix& x, Matrix& out) { CIFM_DISPATCH(logsumexp_rows, x, out); }
void l2_normalize_rows(const Matrix& x, Matrix& out, Matrix& inv_norms, double eps) {
  CIFM_DISPATCH(l2_normalize_rows, x, out, inv_norms, eps);
}
void layernorm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                    Matrix& out, Matrix& xhat, Matrix& inv_std) {
  CIFM_DISPATCH(layernorm_rows, x, gain, bias, eps, out, xhat, inv_std);
}
void layernorm_rows_backward(const Matrix& dout, const Matrix& gain, const Matrix& xhat,
                             const Matrix& inv_std, Matrix& dx, Matrix& dgain, Matrix& dbias) {
  CIFM_DISPATCH(layernorm_rows_backward, dout, gain, xhat, inv_std, dx, dgain, dbias);
}
void gather_rows(const Matrix& table, const std::vector<int32_t>& ids, Matrix& out) {
  CIFM_DISPATCH(gather_rows, table, ids, out);
}
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       const IntMatrix& key_mask, int batch, int len, int heads,
                       Matrix& context, Matrix& probs) {
  CIFM_DISPATCH(attention_forward, q, k, v, key_mask, batch, len, heads, context, probs);
}
void attention_backward(const Matrix& dcontext, const Matrix& q, const Matrix& k,
                        const Matrix& v, const Matrix& probs, int batch, int len, int heads,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
  CIFM_DISPATCH(attention_backward, dcontext, q, k, v, probs, batch, len, heads, dq, dk, dv);
}

#undef CIFM_DISPATCH

void scatter_add_rows(Matrix& table, const std::vector<int32_t>& ids, const Matrix& grads) {
  for (size_t r = 0; r < ids.size(); ++r) {
    double* dst = table.row(ids[r]);
    const double* src = grads.row(static_cast<int>(r));
    for (int j = 0; j < table.cols; ++j) dst[j] += src[j];
  }
}

double sum_all(const Matrix& x) {
  std::vector<double> partial(x.rows, 0.0);
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < x.rows; ++i) {
    const double* r = x.row(i);
    double s = 0.0;
    for (int j = 0; j < x.cols; ++j) s += r[j];
    partial[i] = s;
  }
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

}  // namespace cifm::kernels
