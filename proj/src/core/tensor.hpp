#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace mmvd {

#ifdef MMVD_REAL32
using real = float;
#else
using real = double;
#endif

/// Dense row-major tensor. Rank 0..2 is what the graph uses in practice
/// (scalars, vectors, matrices); conv weights are rank 3.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(real v);
  static Tensor from(std::vector<int> shape, std::vector<real> data);

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  const std::vector<int>& shape() const { return shape_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  real& operator[](size_t i) { return data_[i]; }
  real operator[](size_t i) const { return data_[i]; }

  /// Scalar access, errors unless size() == 1.
  real item() const;

  // 2-D helpers
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }
  real& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  real at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(real v);
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<real> data_;
};

size_t shape_numel(const std::vector<int>& shape);

// Accumulating matrix kernels, C += A * B in the indicated orientation.
// Row-major throughout, single threaded. The nn kernel is register blocked
// four rows at a time which is where nearly all training time goes.
void gemm_nn(int m, int k, int n, const real* A, const real* B, real* C);
// A is m x k, B is n x k, C += A * B^T
void gemm_nt(int m, int k, int n, const real* A, const real* B, real* C);
// A is k x m, B is k x n, C += A^T * B
void gemm_tn(int m, int k, int n, const real* A, const real* B, real* C);

}  // namespace mmvd
