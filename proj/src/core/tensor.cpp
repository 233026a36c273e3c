#include "core/tensor.hpp"

#include <cmath>

namespace mmvd {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    MMVD_CHECK(d >= 0, ErrorCode::ShapeMismatch, "negative dimension ", d);
    n *= static_cast<size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(shape_numel(shape_), real(0));
}

Tensor Tensor::scalar(real v) {
  Tensor t(std::vector<int>{1});
  t.data_[0] = v;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> data) {
  MMVD_CHECK(shape_numel(shape) == data.size(), ErrorCode::ShapeMismatch,
             "from: shape wants ", shape_numel(shape), " elements, got ", data.size());
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

int Tensor::dim(int i) const {
  MMVD_CHECK(i >= 0 && i < ndim(), ErrorCode::ShapeMismatch,
             "dim ", i, " out of range for rank ", ndim());
  return shape_[static_cast<size_t>(i)];
}

real Tensor::item() const {
  MMVD_CHECK(size() == 1, ErrorCode::ShapeMismatch,
             "item() on tensor of size ", size());
  return data_[0];
}

bool Tensor::all_finite() const {
  for (real v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(real v) {
  for (real& x : data_) x = v;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (int i = 0; i < ndim(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[static_cast<size_t>(i)]);
  }
  return s + "]";
}

void gemm_nn(int m, int k, int n, const real* A, const real* B, real* C) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const real* a0 = A + static_cast<size_t>(i) * k;
    const real* a1 = a0 + k;
    const real* a2 = a1 + k;
    const real* a3 = a2 + k;
    real* c0 = C + static_cast<size_t>(i) * n;
    real* c1 = c0 + n;
    real* c2 = c1 + n;
    real* c3 = c2 + n;
    for (int kk = 0; kk < k; ++kk) {
      const real* b = B + static_cast<size_t>(kk) * n;
      const real v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
      for (int j = 0; j < n; ++j) {
        const real bj = b[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    const real* a = A + static_cast<size_t>(i) * k;
    real* c = C + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const real* b = B + static_cast<size_t>(kk) * n;
      const real v = a[kk];
      for (int j = 0; j < n; ++j) c[j] += v * b[j];
    }
  }
}

void gemm_nt(int m, int k, int n, const real* A, const real* B, real* C) {
  for (int i = 0; i < m; ++i) {
    const real* a = A + static_cast<size_t>(i) * k;
    real* c = C + static_cast<size_t>(i) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const real* b0 = B + static_cast<size_t>(j) * k;
      const real* b1 = b0 + k;
      const real* b2 = b1 + k;
      const real* b3 = b2 + k;
      real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int kk = 0; kk < k; ++kk) {
        const real av = a[kk];
        s0 += av * b0[kk];
        s1 += av * b1[kk];
        s2 += av * b2[kk];
        s3 += av * b3[kk];
      }
      c[j] += s0;
      c[j + 1] += s1;
      c[j + 2] += s2;
      c[j + 3] += s3;
    }
    for (; j < n; ++j) {
      const real* b = B + static_cast<size_t>(j) * k;
      real s = 0;
      for (int kk = 0; kk < k; ++kk) s += a[kk] * b[kk];
      c[j] += s;
    }
  }
}

void gemm_tn(int m, int k, int n, const real* A, const real* B, real* C) {
  // rank-1 updates, unit stride on both C rows and B rows
  for (int kk = 0; kk < k; ++kk) {
    const real* arow = A + static_cast<size_t>(kk) * m;
    const real* brow = B + static_cast<size_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const real v = arow[i];
      if (v == real(0)) continue;
      real* c = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += v * brow[j];
    }
  }
}

}  // namespace mmvd
