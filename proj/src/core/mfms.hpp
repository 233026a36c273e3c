#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "core/params.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace mmvd::model {

/// Dimension-preserving residual refinement of a secondary modality: the
/// input plus a 3-layer MLP correction. The last layer starts at zero, so a
/// freshly built model projects identically.
ad::Var project_secondary(ad::Tape& tape, ad::Var z, const Binding& bind,
                          const Mlp3Ids& ids);

/// Injective placement of a narrow feature space inside a wider one.
struct MfmsAssignment {
  int d_s = 0, d_p = 0;
  std::vector<int> theta;      // secondary column i lands at primary column theta[i]
  std::vector<int> theta_hat;  // leftover primary columns, ascending
  std::vector<int> theta_pad() const;
};

/// Stacks the valid prefixes of per-item (T, d) values into one (N, d)
/// matrix, keeping item order.
Tensor flatten_valid(const std::vector<const Tensor*>& seqs,
                     const std::vector<int>& valid_lens);

/// Column cosine similarity between two sample-aligned matrices (N, d_s) and
/// (N, d_p): columns are L2-normalized (all-zero columns stay zero) and
/// S = zs^T zp.
Tensor similarity_matrix(const Tensor& zs, const Tensor& zp);

/// Greedy subspace search. Each secondary dimension, in index order, ranks
/// primary dimensions by descending similarity (ties to the lower index),
/// keeps its k best, and takes the first one still unclaimed. k >= d_s
/// guarantees success. Pure index computation, no gradient involvement.
MfmsAssignment search_mfms(const Tensor& S, int k);

/// Process-wide count of search_mfms invocations, so tests can pin down
/// which paths run a search.
std::uint64_t mfms_search_count();

/// Widens (T, d_s) features to (T, d_p): output column theta[i] is input
/// column i, every other column is zero. Gradients route back through the
/// placed columns only. literal_gather switches to the alternative reading
/// where the zero-padded input is column-indexed by theta_pad; kept for
/// comparison runs, not the default.
ad::Var sparsify(ad::Tape& tape, ad::Var zs, const MfmsAssignment& a,
                 bool literal_gather = false);

/// Sliding window over recent assignments. update() pushes the newest set
/// and scores window stability: counting how often each primary dimension
/// was used, m = w' * d_s / (f_max * n) with f_max the top count, n the
/// number of dimensions hitting it, and w' the current buffer length. m is
/// always >= 1 and equals 1 exactly when the buffered sets coincide or tile
/// the space evenly.
class ConvergenceWindow {
 public:
  ConvergenceWindow(int w, int d_s, int d_p);
  double update(const MfmsAssignment& a);
  int size() const { return static_cast<int>(buf_.size()); }
  int window() const { return w_; }

 private:
  int w_, d_s_, d_p_;
  std::deque<std::vector<int>> buf_;
};

}  // namespace mmvd::model
