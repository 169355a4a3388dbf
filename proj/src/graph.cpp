#include "cifm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <utility>

#include "cifm/common.hpp"
#include "cifm/kernels.hpp"
#include "cifm/rng.hpp"

namespace cifm {

namespace K = kernels;

int Tape::input(Matrix v) {
  Slot s;
  s.grad = zeros_like(v);
  s.val = std::move(v);
  slots_.push_back(std::move(s));
  return static_cast<int>(slots_.size()) - 1;
}

int Tape::param(Matrix v, Matrix* external_grad) {
  if (external_grad == nullptr || external_grad->rows != v.rows ||
      external_grad->cols != v.cols)
    throw ConsistencyError("tape param: external gradient shape mismatch");
  const int id = input(std::move(v));
  slots_[id].external = external_grad;
  return id;
}

int Tape::alloc(Matrix v) { return input(std::move(v)); }

double Tape::scalar(int id) const {
  const Matrix& v = slots_[id].val;
  if (v.rows != 1 || v.cols != 1) throw ConsistencyError("tape scalar: value is not 1x1");
  return v.a[0];
}

void Tape::backward(int root) {
  Matrix& g = slots_[root].grad;
  if (g.rows != 1 || g.cols != 1) throw ConsistencyError("tape backward: root is not 1x1");
  g.a[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  for (Slot& s : slots_) {
    if (s.external == nullptr) continue;
    for (size_t i = 0; i < s.grad.a.size(); ++i) s.external->a[i] += s.grad.a[i];
  }
}

namespace graph {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ConsistencyError(what);
}

void add_into(Matrix& dst, const Matrix& src) {
  for (size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
}

}  // namespace

int matmul(Tape& t, int a, int b) {
  const Matrix& A = t.val(a);
  const Matrix& B = t.val(b);
  require(A.cols == B.rows, "matmul: inner dimensions differ");
  Matrix out(A.rows, B.cols);
  K::matmul_nn(A, B, out, false);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, b, o] {
    K::matmul_nt(t.grad(o), t.val(b), t.grad(a), true);
    K::matmul_tn(t.val(a), t.grad(o), t.grad(b), true);
  });
  return o;
}

int matmul_nt(Tape& t, int a, int b) {
  const Matrix& A = t.val(a);
  const Matrix& B = t.val(b);
  require(A.cols == B.cols, "matmul_nt: inner dimensions differ");
  Matrix out(A.rows, B.rows);
  K::matmul_nt(A, B, out, false);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, b, o] {
    K::matmul_nn(t.grad(o), t.val(b), t.grad(a), true);
    K::matmul_tn(t.grad(o), t.val(a), t.grad(b), true);
  });
  return o;
}

int affine(Tape& t, int x, int w, int b) {
  const Matrix& X = t.val(x);
  const Matrix& W = t.val(w);
  const Matrix& B = t.val(b);
  require(X.cols == W.rows && B.rows == 1 && B.cols == W.cols,
          "affine: incompatible shapes");
  Matrix out(X.rows, W.cols);
  K::matmul_nn(X, W, out, false);
  K::add_bias_rows(out, B);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, x, w, b, o] {
    K::matmul_nt(t.grad(o), t.val(w), t.grad(x), true);
    K::matmul_tn(t.val(x), t.grad(o), t.grad(w), true);
    Matrix db(1, t.grad(b).cols);
    K::col_sums(t.grad(o), db);
    add_into(t.grad(b), db);
  });
  return o;
}

int add(Tape& t, int a, int b) {
  const Matrix& A = t.val(a);
  require(A.same_shape(t.val(b)), "add: shape mismatch");
  Matrix out = A;
  add_into(out, t.val(b));
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, b, o] {
    add_into(t.grad(a), t.grad(o));
    add_into(t.grad(b), t.grad(o));
  });
  return o;
}

int sub(Tape& t, int a, int b) {
  const Matrix& A = t.val(a);
  require(A.same_shape(t.val(b)), "sub: shape mismatch");
  Matrix out = A;
  for (size_t i = 0; i < out.a.size(); ++i) out.a[i] -= t.val(b).a[i];
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, b, o] {
    add_into(t.grad(a), t.grad(o));
    const Matrix& g = t.grad(o);
    Matrix& gb = t.grad(b);
    for (size_t i = 0; i < gb.a.size(); ++i) gb.a[i] -= g.a[i];
  });
  return o;
}

int scale(Tape& t, int a, double c) {
  Matrix out = t.val(a);
  for (double& v : out.a) v *= c;
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o, c] {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    for (size_t i = 0; i < ga.a.size(); ++i) ga.a[i] += c * g.a[i];
  });
  return o;
}

int add_const(Tape& t, int a, double c) {
  Matrix out = t.val(a);
  for (double& v : out.a) v += c;
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o] { add_into(t.grad(a), t.grad(o)); });
  return o;
}

int relu(Tape& t, int a) {
  Matrix out = t.val(a);
  for (double& v : out.a) v = std::max(v, 0.0);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o] {
    const Matrix& x = t.val(a);
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    for (size_t i = 0; i < ga.a.size(); ++i)
      if (x.a[i] > 0.0) ga.a[i] += g.a[i];
  });
  return o;
}

int gelu(Tape& t, int a) {
  static const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
  Matrix out = t.val(a);
  for (double& v : out.a) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o] {
    const Matrix& x = t.val(a);
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    for (size_t i = 0; i < ga.a.size(); ++i) {
      const double v = x.a[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      ga.a[i] += g.a[i] * (cdf + v * pdf);
    }
  });
  return o;
}

int dropout(Tape& t, int a, double rate, uint64_t seed, bool train) {
  if (!train || rate <= 0.0) return a;
  require(rate < 1.0, "dropout: rate must be below 1");
  const Matrix& x = t.val(a);
  Rng rng(seed);
  const double inv_keep = 1.0 / (1.0 - rate);
  std::vector<uint8_t> keep(x.a.size());
  Matrix out = x;
  for (size_t i = 0; i < out.a.size(); ++i) {
    keep[i] = rng.bernoulli(1.0 - rate) ? 1 : 0;
    out.a[i] = keep[i] ? out.a[i] * inv_keep : 0.0;
  }
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o, inv_keep, keep = std::move(keep)] {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    for (size_t i = 0; i < ga.a.size(); ++i)
      if (keep[i]) ga.a[i] += g.a[i] * inv_keep;
  });
  return o;
}

int embedding(Tape& t, int table, const std::vector<int32_t>& ids) {
  const Matrix& tab = t.val(table);
  for (int32_t id : ids)
    require(id >= 0 && id < tab.rows, "embedding: id out of range");
  Matrix out(static_cast<int>(ids.size()), tab.cols);
  K::gather_rows(tab, ids, out);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, table, o, ids] { K::scatter_add_rows(t.grad(table), ids, t.grad(o)); });
  return o;
}

int add_position_rows(Tape& t, int x, int pos, int batch, int len) {
  const Matrix& X = t.val(x);
  const Matrix& P = t.val(pos);
  require(X.rows == batch * len && P.rows >= len && P.cols == X.cols,
          "add_position_rows: incompatible shapes");
  Matrix out = X;
  for (int n = 0; n < batch; ++n)
    for (int j = 0; j < len; ++j) {
      double* r = out.row(n * len + j);
      const double* p = P.row(j);
      for (int c = 0; c < out.cols; ++c) r[c] += p[c];
    }
  const int o = t.alloc(std::move(out));
  t.push_op([&t, x, pos, o, batch, len] {
    const Matrix& g = t.grad(o);
    add_into(t.grad(x), g);
    Matrix& gp = t.grad(pos);
    for (int n = 0; n < batch; ++n)
      for (int j = 0; j < len; ++j) {
        const double* r = g.row(n * len + j);
        double* p = gp.row(j);
        for (int c = 0; c < g.cols; ++c) p[c] += r[c];
      }
  });
  return o;
}

int masked_mean_pool(Tape& t, int x, const IntMatrix& mask, int batch, int len) {
  const Matrix& X = t.val(x);
  require(X.rows == batch * len && mask.rows == batch && mask.cols == len,
          "masked_mean_pool: incompatible shapes");
  std::vector<double> inv_count(batch);
  Matrix out(batch, X.cols);
  out.zero();
  for (int n = 0; n < batch; ++n) {
    int cnt = 0;
    double* o = out.row(n);
    for (int j = 0; j < len; ++j) {
      if (!mask.at(n, j)) continue;
      ++cnt;
      const double* r = X.row(n * len + j);
      for (int c = 0; c < X.cols; ++c) o[c] += r[c];
    }
    inv_count[n] = cnt > 0 ? 1.0 / cnt : 0.0;
    for (int c = 0; c < X.cols; ++c) o[c] *= inv_count[n];
  }
  const int o = t.alloc(std::move(out));
  t.push_op([&t, x, o, mask, batch, len, inv_count = std::move(inv_count)] {
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad(x);
    for (int n = 0; n < batch; ++n) {
      const double* go = g.row(n);
      for (int j = 0; j < len; ++j) {
        if (!mask.at(n, j)) continue;
        double* r = gx.row(n * len + j);
        for (int c = 0; c < g.cols; ++c) r[c] += go[c] * inv_count[n];
      }
    }
  });
  return o;
}

int first_token_pool(Tape& t, int x, int batch, int len) {
  const Matrix& X = t.val(x);
  require(X.rows == batch * len, "first_token_pool: incompatible shapes");
  Matrix out(batch, X.cols);
  for (int n = 0; n < batch; ++n) {
    const double* r = X.row(n * len);
    std::copy(r, r + X.cols, out.row(n));
  }
  const int o = t.alloc(std::move(out));
  t.push_op([&t, x, o, batch, len] {
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad(x);
    for (int n = 0; n < batch; ++n) {
      const double* go = g.row(n);
      double* r = gx.row(n * len);
      for (int c = 0; c < g.cols; ++c) r[c] += go[c];
    }
  });
  return o;
}

int layernorm(Tape& t, int x, int gain, int bias, double eps) {
  const Matrix& X = t.val(x);
  require(t.val(gain).cols == X.cols && t.val(bias).cols == X.cols,
          "layernorm: gain/bias width mismatch");
  Matrix out(X.rows, X.cols);
  auto xhat = std::make_shared<Matrix>(X.rows, X.cols);
  auto inv_std = std::make_shared<Matrix>(X.rows, 1);
  K::layernorm_rows(X, t.val(gain), t.val(bias), eps, out, *xhat, *inv_std);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, x, gain, bias, o, xhat, inv_std] {
    const Matrix& g = t.grad(o);
    Matrix dx(g.rows, g.cols);
    Matrix dgain(1, g.cols), dbias(1, g.cols);
    dgain.zero();
    dbias.zero();
    K::layernorm_rows_backward(g, t.val(gain), *xhat, *inv_std, dx, dgain, dbias);
    add_into(t.grad(x), dx);
    add_into(t.grad(gain), dgain);
    add_into(t.grad(bias), dbias);
  });
  return o;
}

int l2_normalize(Tape& t, int x, double eps) {
  const Matrix& X = t.val(x);
  Matrix out(X.rows, X.cols);
  auto inv_norms = std::make_shared<Matrix>(X.rows, 1);
  K::l2_normalize_rows(X, out, *inv_norms, eps);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, x, o, inv_norms] {
    const Matrix& g = t.grad(o);
    const Matrix& y = t.val(o);
    Matrix& gx = t.grad(x);
    for (int i = 0; i < g.rows; ++i) {
      const double* gr = g.row(i);
      const double* yr = y.row(i);
      double s = 0.0;
      for (int j = 0; j < g.cols; ++j) s += gr[j] * yr[j];
      const double inv = inv_norms->at(i, 0);
      double* gxr = gx.row(i);
      for (int j = 0; j < g.cols; ++j) gxr[j] += inv * (gr[j] - yr[j] * s);
    }
  });
  return o;
}

int attention(Tape& t, int q, int k, int v, const IntMatrix& key_mask, int batch, int len,
              int heads) {
  const Matrix& Q = t.val(q);
  require(Q.rows == batch * len && Q.cols % heads == 0 && Q.same_shape(t.val(k)) &&
              Q.same_shape(t.val(v)),
          "attention: incompatible shapes");
  Matrix ctx(Q.rows, Q.cols);
  auto probs = std::make_shared<Matrix>(batch * heads * len, len);
  K::attention_forward(Q, t.val(k), t.val(v), key_mask, batch, len, heads, ctx, *probs);
  const int o = t.alloc(std::move(ctx));
  t.push_op([&t, q, k, v, o, probs, batch, len, heads] {
    const Matrix& g = t.grad(o);
    Matrix dq(g.rows, g.cols), dk(g.rows, g.cols), dv(g.rows, g.cols);
    K::attention_backward(g, t.val(q), t.val(k), t.val(v), *probs, batch, len, heads, dq, dk,
                          dv);
    add_into(t.grad(q), dq);
    add_into(t.grad(k), dk);
    add_into(t.grad(v), dv);
  });
  return o;
}

int take_diag(Tape& t, int a) {
  const Matrix& A = t.val(a);
  require(A.rows == A.cols, "take_diag: matrix is not square");
  Matrix out(A.rows, 1);
  for (int i = 0; i < A.rows; ++i) out.at(i, 0) = A.at(i, i);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o] {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    for (int i = 0; i < g.rows; ++i) ga.at(i, i) += g.at(i, 0);
  });
  return o;
}

int logsumexp_rows(Tape& t, int a) {
  const Matrix& A = t.val(a);
  Matrix out(A.rows, 1);
  K::logsumexp_rows(A, out);
  auto probs = std::make_shared<Matrix>(A.rows, A.cols);
  K::softmax_rows(A, *probs);
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o, probs] {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    for (int i = 0; i < ga.rows; ++i) {
      const double gi = g.at(i, 0);
      const double* p = probs->row(i);
      double* gr = ga.row(i);
      for (int j = 0; j < ga.cols; ++j) gr[j] += gi * p[j];
    }
  });
  return o;
}

int mean_all(Tape& t, int a) {
  const Matrix& A = t.val(a);
  const double n = static_cast<double>(A.rows) * A.cols;
  Matrix out(1, 1);
  out.a[0] = K::sum_all(A) / n;
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o, n] {
    const double g = t.grad(o).a[0] / n;
    for (double& v : t.grad(a).a) v += g;
  });
  return o;
}

int concat_cols(Tape& t, int a, int b) {
  const Matrix& A = t.val(a);
  const Matrix& B = t.val(b);
  require(A.rows == B.rows, "concat_cols: row count mismatch");
  Matrix out(A.rows, A.cols + B.cols);
  for (int i = 0; i < A.rows; ++i) {
    std::copy(A.row(i), A.row(i) + A.cols, out.row(i));
    std::copy(B.row(i), B.row(i) + B.cols, out.row(i) + A.cols);
  }
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, b, o] {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    Matrix& gb = t.grad(b);
    for (int i = 0; i < g.rows; ++i) {
      const double* gr = g.row(i);
      double* gar = ga.row(i);
      double* gbr = gb.row(i);
      for (int j = 0; j < ga.cols; ++j) gar[j] += gr[j];
      for (int j = 0; j < gb.cols; ++j) gbr[j] += gr[ga.cols + j];
    }
  });
  return o;
}

int permute_rows(Tape& t, int a, const std::vector<int>& perm) {
  const Matrix& A = t.val(a);
  require(static_cast<int>(perm.size()) == A.rows, "permute_rows: permutation length mismatch");
  Matrix out(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    require(perm[i] >= 0 && perm[i] < A.rows, "permute_rows: index out of range");
    std::copy(A.row(perm[i]), A.row(perm[i]) + A.cols, out.row(i));
  }
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o, perm] {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(a);
    for (int i = 0; i < g.rows; ++i) {
      const double* gr = g.row(i);
      double* gar = ga.row(perm[i]);
      for (int j = 0; j < g.cols; ++j) gar[j] += gr[j];
    }
  });
  return o;
}

int log_mean_exp_ema(Tape& t, int a, double log_ema) {
  const Matrix& A = t.val(a);
  require(A.cols == 1, "log_mean_exp_ema: expects a column");
  Matrix col(1, A.rows);
  for (int i = 0; i < A.rows; ++i) col.at(0, i) = A.at(i, 0);
  Matrix lse(1, 1);
  K::serial::logsumexp_rows(col, lse);
  Matrix out(1, 1);
  out.a[0] = lse.a[0] - std::log(static_cast<double>(A.rows));
  const int o = t.alloc(std::move(out));
  t.push_op([&t, a, o, log_ema] {
    const double g = t.grad(o).a[0];
    const Matrix& x = t.val(a);
    Matrix& ga = t.grad(a);
    const double n = static_cast<double>(x.rows);
    for (int i = 0; i < x.rows; ++i)
      ga.at(i, 0) += g * std::exp(x.at(i, 0) - log_ema) / n;
  });
  return o;
}

int cross_entropy_mean(Tape& t, int logits, const std::vector<int32_t>& labels) {
  const Matrix& L = t.val(logits);
  require(static_cast<int>(labels.size()) == L.rows, "cross_entropy_mean: label count mismatch");
  for (int32_t y : labels)
    require(y >= 0 && y < L.cols, "cross_entropy_mean: label out of range");
  auto probs = std::make_shared<Matrix>(L.rows, L.cols);
  K::softmax_rows(L, *probs);
  double loss = 0.0;
  for (int i = 0; i < L.rows; ++i) loss -= std::log(std::max(probs->at(i, labels[i]), 1e-300));
  Matrix out(1, 1);
  out.a[0] = loss / L.rows;
  const int o = t.alloc(std::move(out));
  t.push_op([&t, logits, o, labels, probs] {
    const double g = t.grad(o).a[0] / probs->rows;
    Matrix& gl = t.grad(logits);
    for (int i = 0; i < gl.rows; ++i) {
      const double* p = probs->row(i);
      double* gr = gl.row(i);
      for (int j = 0; j < gl.cols; ++j) gr[j] += g * p[j];
      gr[labels[i]] -= g;
    }
  });
  return o;
}

int mse_mean(Tape& t, int pred, const Matrix& target) {
  const Matrix& P = t.val(pred);
  require(P.same_shape(target), "mse_mean: shape mismatch");
  const double n = static_cast<double>(P.rows) * P.cols;
  double loss = 0.0;
  for (size_t i = 0; i < P.a.size(); ++i) {
    const double d = P.a[i] - target.a[i];
    loss += d * d;
  }
  Matrix out(1, 1);
  out.a[0] = loss / n;
  const int o = t.alloc(std::move(out));
  t.push_op([&t, pred, o, target, n] {
    const double g = 2.0 * t.grad(o).a[0] / n;
    const Matrix& p = t.val(pred);
    Matrix& gp = t.grad(pred);
    for (size_t i = 0; i < gp.a.size(); ++i) gp.a[i] += g * (p.a[i] - target.a[i]);
  });
  return o;
}

int conv_text_pool(Tape& t, int x, int w, int b, int batch, int len, int width) {
  const Matrix& X = t.val(x);
  const Matrix& W = t.val(w);
  const Matrix& B = t.val(b);
  const int dim = X.cols;
  const int filters = W.rows;
  require(X.rows == batch * len && W.cols == width * dim && B.cols == filters && len >= width,
          "conv_text_pool: incompatible shapes");
  const int positions = len - width + 1;
  Matrix out(batch, filters);
  auto best_pos = std::make_shared<IntMatrix>(batch, filters);
  auto best_active = std::make_shared<IntMatrix>(batch, filters);
  for (int n = 0; n < batch; ++n)
    for (int f = 0; f < filters; ++f) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int p = 0; p < positions; ++p) {
        double s = B.at(0, f);
        for (int u = 0; u < width; ++u) {
          const double* xr = X.row(n * len + p + u);
          const double* wr = W.row(f) + u * dim;
          for (int c = 0; c < dim; ++c) s += xr[c] * wr[c];
        }
        if (s > best) {
          best = s;
          arg = p;
        }
      }
      best_pos->at(n, f) = arg;
      best_active->at(n, f) = best > 0.0 ? 1 : 0;
      out.at(n, f) = std::max(best, 0.0);
    }
  const int o = t.alloc(std::move(out));
  t.push_op([&t, x, w, b, o, batch, len, width, best_pos, best_active] {
    const Matrix& g = t.grad(o);
    const Matrix& X2 = t.val(x);
    const Matrix& W2 = t.val(w);
    const int dim = X2.cols;
    Matrix& gx = t.grad(x);
    Matrix& gw = t.grad(w);
    Matrix& gb = t.grad(b);
    for (int n = 0; n < batch; ++n)
      for (int f = 0; f < W2.rows; ++f) {
        if (!best_active->at(n, f)) continue;
        const double gv = g.at(n, f);
        if (gv == 0.0) continue;
        const int p = best_pos->at(n, f);
        gb.at(0, f) += gv;
        for (int u = 0; u < width; ++u) {
          const double* xr = X2.row(n * len + p + u);
          const double* wr = W2.row(f) + u * dim;
          double* gxr = gx.row(n * len + p + u);
          double* gwr = gw.row(f) + u * dim;
          for (int c = 0; c < dim; ++c) {
            gwr[c] += gv * xr[c];
            gxr[c] += gv * wr[c];
          }
        }
      }
  });
  return o;
}

}  // namespace graph
}  // namespace cifm
