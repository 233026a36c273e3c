#pragma once

#include <vector>

#include "core/encoder.hpp"
#include "core/tape.hpp"

namespace mmvd::model {

/// Per-bag graph values plus their valid prefix lengths.
struct VarBatch {
  std::vector<ad::Var> items;
  std::vector<int> valid_lens;
  int total_valid() const;
};

/// 1 - mean cosine between matching rows, averaged over every valid timestep
/// in the batch. Zero-norm rows contribute cosine 0 and no gradient.
ad::Var cosine_align_loss(ad::Tape& tape, const VarBatch& x, const VarBatch& y);

/// Clamped cross entropy between paired score sequences, averaged over every
/// valid timestep in the batch.
ad::Var sce_loss(ad::Tape& tape, const VarBatch& p, const VarBatch& q, real eps);

/// Mean per-bag ranking loss across the batch.
ad::Var batch_mil(ad::Tape& tape, const VarBatch& scores, const std::vector<int>& labels,
                  real eps);

struct AlignmentParts {
  ad::Var cos_ra, sce_ra, cos_rf, sce_rf, cos_af, sce_af;
  ad::Var aux_a, aux_f;
  ad::Var total;
};

/// Pairwise three-way alignment: cosine terms on the feature sequences,
/// cross-entropy terms on the score sequences, and the auxiliary ranking
/// losses on the projected modalities scaled by lambda_aux. A zero
/// lambda_aux leaves the aux terms out of the gradient entirely. Holding the
/// rgb operands fixed is the caller's business (pass them through
/// stop_grad).
AlignmentParts alignment_loss(ad::Tape& tape, const VarBatch& z_r, const VarBatch& zt_a,
                              const VarBatch& zt_f, const VarBatch& s_r,
                              const VarBatch& sh_a, const VarBatch& sh_f,
                              const std::vector<int>& labels, real lambda_aux, real eps);

}  // namespace mmvd::model
