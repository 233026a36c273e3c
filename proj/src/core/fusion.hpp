#pragma once

#include "core/align.hpp"
#include "core/params.hpp"
#include "core/tape.hpp"

namespace mmvd::model {

/// Concatenates the valid prefixes of the three streams, audio first, then
/// rgb, then flow.
ad::Var fuse(ad::Tape& tape, ad::Var zt_a, ad::Var z_r, ad::Var zt_f, int valid_len);

/// Two projection layers down to the fused width, then three dilated
/// residual conv blocks (dilations 1, 2, 4), y = x + relu(conv(x)).
/// Zero-initialized convs make the stack start as a pass-through of the
/// projection.
ad::Var multimodal_encode(ad::Tape& tape, ad::Var z_raf, const Binding& bind,
                          const FusionIds& ids);

/// Ranked-segment triplet: anchor averages the highest-scored rows of normal
/// bags, positive the lowest-scored rows of anomalous bags, negative their
/// highest-scored rows. The three means are L2-normalized and hinged on the
/// distance gap. A batch without both classes scores exact zero, and the
/// ranking itself carries no gradient.
ad::Var triplet_loss(ad::Tape& tape, const VarBatch& feats, const VarBatch& scores,
                     const std::vector<int>& labels, real margin);

}  // namespace mmvd::model
