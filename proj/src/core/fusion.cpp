#include "core/fusion.hpp"

#include <algorithm>
#include <numeric>

#include "core/error.hpp"

namespace mmvd::model {

namespace {

std::vector<int> ranked_indices(const Tensor& s, int k, bool highest) {
  std::vector<int> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const real sa = s[static_cast<size_t>(a)], sb = s[static_cast<size_t>(b)];
    if (sa != sb) return highest ? sa > sb : sa < sb;
    return a < b;
  });
  order.resize(static_cast<size_t>(k));
  return order;
}

}  // namespace

ad::Var fuse(ad::Tape& tape, ad::Var zt_a, ad::Var z_r, ad::Var zt_f, int valid_len) {
  ad::Var a = tape.slice_rows(zt_a, 0, valid_len);
  ad::Var r = tape.slice_rows(z_r, 0, valid_len);
  ad::Var f = tape.slice_rows(zt_f, 0, valid_len);
  return tape.concat_cols({a, r, f});
}

ad::Var multimodal_encode(ad::Tape& tape, ad::Var z_raf, const Binding& bind,
                          const FusionIds& ids) {
  ad::Var h = tape.gelu(tape.linear(z_raf, bind[ids.w1], bind[ids.b1]));
  ad::Var x = tape.linear(h, bind[ids.w2], bind[ids.b2]);
  int dilation = 1;
  for (const ConvIds& c : ids.tcn) {
    // pre-activation residual: the zero-initialized branch is an exact
    // pass-through yet still sees nonzero gradients
    x = tape.add(x, tape.conv1d(tape.relu(x), bind[c.w], bind[c.b], dilation));
    dilation *= 2;
  }
  return x;
}

ad::Var triplet_loss(ad::Tape& tape, const VarBatch& feats, const VarBatch& scores,
                     const std::vector<int>& labels, real margin) {
  MMVD_CHECK(!feats.items.empty() && feats.items.size() == scores.items.size() &&
                 feats.items.size() == labels.size(),
             ErrorCode::InvalidArgument, "triplet_loss: batch sizes disagree");
  std::vector<ad::Var> anchor_vecs, pos_vecs, neg_vecs;
  for (size_t i = 0; i < feats.items.size(); ++i) {
    const int len = feats.valid_lens[i];
    // copy: creating nodes below may relocate tape storage
    const Tensor s = tape.value(scores.items[i]);
    MMVD_CHECK(s.ndim() == 1 && s.dim(0) == len, ErrorCode::ShapeMismatch,
               "triplet_loss: bag ", i, " scores ", s.shape_str(), " vs length ", len);
    const int k = top_k_of(len);
    MMVD_CHECK(k <= len, ErrorCode::InvalidArgument, "triplet_loss: k ", k, " over ", len);
    if (labels[i] == 0) {
      anchor_vecs.push_back(
          tape.select_rows_mean(feats.items[i], ranked_indices(s, k, true)));
    } else {
      pos_vecs.push_back(
          tape.select_rows_mean(feats.items[i], ranked_indices(s, k, false)));
      neg_vecs.push_back(
          tape.select_rows_mean(feats.items[i], ranked_indices(s, k, true)));
    }
  }
  if (anchor_vecs.empty() || pos_vecs.empty()) return tape.leaf(Tensor::scalar(0));

  ad::Var a = tape.l2_normalize(tape.mean_of(anchor_vecs));
  ad::Var p = tape.l2_normalize(tape.mean_of(pos_vecs));
  ad::Var n = tape.l2_normalize(tape.mean_of(neg_vecs));
  ad::Var gap = tape.sub(tape.l2_norm(tape.sub(a, p)), tape.l2_norm(tape.sub(a, n)));
  return tape.relu(tape.affine(gap, 1, margin));
}

}  // namespace mmvd::model
