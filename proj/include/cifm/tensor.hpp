#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cifm/common.hpp"

namespace cifm {

// Dense row-major matrix of doubles. The one value type the whole library
// computes with; kernels.hpp provides the loops that operate on it.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  size_t size() const { return a.size(); }
  bool empty() const { return a.empty(); }

  double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

  double& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { std::fill(a.begin(), a.end(), v); }
  void zero() { fill(0.0); }

  bool all_finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline Matrix zeros_like(const Matrix& m) { return Matrix(m.rows, m.cols); }

// Integer matrix for token ids and masks.
struct IntMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int32_t> a;

  IntMatrix() = default;
  IntMatrix(int r, int c, int32_t fill = 0)
      : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  int32_t& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  int32_t at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
  const int32_t* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
};

// FNV-1a over the raw bytes; used for weight checksums and config hashes.
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull);
uint64_t checksum(const Matrix& m);

}  // namespace cifm
