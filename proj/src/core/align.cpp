#include "core/align.hpp"

#include "core/error.hpp"

namespace mmvd::model {

namespace {

void check_pair(const VarBatch& x, const VarBatch& y, const char* who) {
  MMVD_CHECK(!x.items.empty(), ErrorCode::InvalidArgument, who, ": empty batch");
  MMVD_CHECK(x.items.size() == x.valid_lens.size(), ErrorCode::InvalidArgument, who,
             ": item/length count mismatch");
  MMVD_CHECK(x.items.size() == y.items.size(), ErrorCode::ShapeMismatch, who,
             ": batches of ", x.items.size(), " and ", y.items.size(), " items");
  for (size_t i = 0; i < x.items.size(); ++i)
    MMVD_CHECK(x.valid_lens[i] == y.valid_lens[i], ErrorCode::ShapeMismatch, who,
               ": item ", i, " valid lengths differ");
}

std::vector<real> length_weights(const VarBatch& b) {
  real n = 0;
  for (int l : b.valid_lens) n += static_cast<real>(l);
  std::vector<real> w(b.valid_lens.size());
  for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<real>(b.valid_lens[i]) / n;
  return w;
}

}  // namespace

int VarBatch::total_valid() const {
  int n = 0;
  for (int l : valid_lens) n += l;
  return n;
}

ad::Var cosine_align_loss(ad::Tape& tape, const VarBatch& x, const VarBatch& y) {
  check_pair(x, y, "cosine_align_loss");
  std::vector<ad::Var> per_item;
  per_item.reserve(x.items.size());
  for (size_t i = 0; i < x.items.size(); ++i)
    per_item.push_back(tape.cosine_row_mean(x.items[i], y.items[i], x.valid_lens[i]));
  ad::Var mean_cos = tape.weighted_sum(per_item, length_weights(x));
  return tape.affine(mean_cos, -1, 1);
}

ad::Var sce_loss(ad::Tape& tape, const VarBatch& p, const VarBatch& q, real eps) {
  check_pair(p, q, "sce_loss");
  std::vector<ad::Var> per_item;
  per_item.reserve(p.items.size());
  for (size_t i = 0; i < p.items.size(); ++i)
    per_item.push_back(tape.score_cross_entropy(p.items[i], q.items[i], p.valid_lens[i], eps));
  return tape.weighted_sum(per_item, length_weights(p));
}

ad::Var batch_mil(ad::Tape& tape, const VarBatch& scores, const std::vector<int>& labels,
                  real eps) {
  MMVD_CHECK(!scores.items.empty() && scores.items.size() == labels.size(),
             ErrorCode::InvalidArgument, "batch_mil: ", scores.items.size(), " bags vs ",
             labels.size(), " labels");
  std::vector<ad::Var> per_bag;
  per_bag.reserve(scores.items.size());
  for (size_t i = 0; i < scores.items.size(); ++i)
    per_bag.push_back(mil_loss(tape, scores.items[i], scores.valid_lens[i], labels[i], eps));
  return tape.mean_of(per_bag);
}

AlignmentParts alignment_loss(ad::Tape& tape, const VarBatch& z_r, const VarBatch& zt_a,
                              const VarBatch& zt_f, const VarBatch& s_r,
                              const VarBatch& sh_a, const VarBatch& sh_f,
                              const std::vector<int>& labels, real lambda_aux, real eps) {
  AlignmentParts parts;
  parts.cos_ra = cosine_align_loss(tape, z_r, zt_a);
  parts.sce_ra = sce_loss(tape, s_r, sh_a, eps);
  parts.cos_rf = cosine_align_loss(tape, z_r, zt_f);
  parts.sce_rf = sce_loss(tape, s_r, sh_f, eps);
  parts.cos_af = cosine_align_loss(tape, zt_a, zt_f);
  parts.sce_af = sce_loss(tape, sh_a, sh_f, eps);
  parts.aux_a = batch_mil(tape, sh_a, labels, eps);
  parts.aux_f = batch_mil(tape, sh_f, labels, eps);
  parts.total = tape.weighted_sum(
      {parts.cos_ra, parts.sce_ra, parts.cos_rf, parts.sce_rf, parts.cos_af, parts.sce_af,
       parts.aux_a, parts.aux_f},
      {1, 1, 1, 1, 1, 1, lambda_aux, lambda_aux});
  return parts;
}

}  // namespace mmvd::model
