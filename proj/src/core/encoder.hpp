#pragma once

#include <memory>
#include <vector>

#include "core/config.hpp"
#include "core/params.hpp"
#include "core/tape.hpp"

namespace mmvd::model {

/// Row-major t x t attendance mask. Key columns at or past valid_len are
/// masked off everywhere; band > 0 additionally restricts each query to keys
/// within band / 2 steps.
std::shared_ptr<const std::vector<uint8_t>> attention_mask(int t, int valid_len, int band);

/// Temporal feature reduction: one linear conv over the raw rows, no
/// activation.
ad::Var conv_reduce(ad::Tape& tape, ad::Var x, const Binding& bind, const ConvIds& ids);

/// Captured per-head attention distributions, in head order.
struct AttnProbe {
  std::vector<Tensor> head_probs;
};

/// One transformer layer. The first half of the heads attend globally, the
/// rest through the local band; residuals follow the post-norm pattern
/// (normalize the sublayer output, then add the input back).
ad::Var gl_mhsa_layer(ad::Tape& tape, ad::Var z, const Binding& bind, const LayerIds& ids,
                      const cfg::EncoderConfig& ec, int dim, int valid_len,
                      AttnProbe* probe = nullptr);

ad::Var encode(ad::Tape& tape, ad::Var x, const Binding& bind, const EncoderIds& ids,
               const cfg::EncoderConfig& ec, int dim, int valid_len);

/// Scoring head D -> D/2 -> D/4 -> 1, GELU inside, sigmoid out, flattened
/// to a length-T score vector.
ad::Var regress(ad::Tape& tape, ad::Var z, const Binding& bind, const Mlp3Ids& ids);

/// Instances kept by the ranking loss for a bag of the given length.
int top_k_of(int valid_len);

ad::Var mil_loss(ad::Tape& tape, ad::Var scores, int valid_len, int y, real eps);

}  // namespace mmvd::model
