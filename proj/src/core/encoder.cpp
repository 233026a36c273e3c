#include "core/encoder.hpp"

#include <cmath>
#include <cstdlib>

#include "core/error.hpp"

namespace mmvd::model {

std::shared_ptr<const std::vector<uint8_t>> attention_mask(int t, int valid_len, int band) {
  MMVD_CHECK(t >= 1, ErrorCode::InvalidArgument, "attention_mask: t ", t);
  MMVD_CHECK(valid_len >= 0 && valid_len <= t, ErrorCode::InvalidArgument,
             "attention_mask: valid_len ", valid_len, " vs t ", t);
  auto m = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(t) * t, 0);
  const int half = band / 2;
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < valid_len; ++j) {
      if (band > 0 && std::abs(i - j) > half) continue;
      (*m)[static_cast<size_t>(i) * t + j] = 1;
    }
  return m;
}

ad::Var conv_reduce(ad::Tape& tape, ad::Var x, const Binding& bind, const ConvIds& ids) {
  return tape.conv1d(x, bind[ids.w], bind[ids.b]);
}

ad::Var gl_mhsa_layer(ad::Tape& tape, ad::Var z, const Binding& bind, const LayerIds& ids,
                      const cfg::EncoderConfig& ec, int dim, int valid_len, AttnProbe* probe) {
  const Tensor& Z = tape.value(z);
  MMVD_CHECK(Z.ndim() == 2 && Z.dim(1) == dim, ErrorCode::ShapeMismatch,
             "gl_mhsa_layer: input ", Z.shape_str(), " vs dim ", dim);
  const int t = Z.dim(0);
  const int heads = ec.heads;
  MMVD_CHECK(dim % heads == 0, ErrorCode::InvalidArgument, "gl_mhsa_layer: ", heads,
             " heads do not divide dim ", dim);
  const int dh = dim / heads;

  ad::Var q = tape.linear(z, bind[ids.attn.wq], bind[ids.attn.bq]);
  ad::Var k = tape.linear(z, bind[ids.attn.wk], bind[ids.attn.bk]);
  ad::Var v = tape.linear(z, bind[ids.attn.wv], bind[ids.attn.bv]);

  auto global_mask = attention_mask(t, valid_len, 0);
  auto local_mask = attention_mask(t, valid_len, ec.local_window);

  const real scale = real(1) / std::sqrt(static_cast<real>(dh));
  std::vector<ad::Var> head_out;
  head_out.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    ad::Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    ad::Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    ad::Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    ad::Var scores = tape.affine(tape.matmul_nt(qh, kh), scale, 0);
    ad::Var probs = tape.masked_softmax(scores, h < heads / 2 ? global_mask : local_mask);
    if (probe) probe->head_probs.push_back(tape.value(probs));
    head_out.push_back(tape.matmul(probs, vh));
  }
  ad::Var attn =
      tape.linear(tape.concat_cols(head_out), bind[ids.attn.wo], bind[ids.attn.bo]);
  ad::Var zhat = tape.add(tape.layer_norm(attn, bind[ids.ln1.g], bind[ids.ln1.b]), z);
  ad::Var mid = tape.gelu(tape.linear(zhat, bind[ids.ffn.w1], bind[ids.ffn.b1]));
  ad::Var ffn = tape.linear(mid, bind[ids.ffn.w2], bind[ids.ffn.b2]);
  return tape.add(tape.layer_norm(ffn, bind[ids.ln2.g], bind[ids.ln2.b]), zhat);
}

ad::Var encode(ad::Tape& tape, ad::Var x, const Binding& bind, const EncoderIds& ids,
               const cfg::EncoderConfig& ec, int dim, int valid_len) {
  ad::Var z = conv_reduce(tape, x, bind, ids.conv);
  for (const LayerIds& layer : ids.layers)
    z = gl_mhsa_layer(tape, z, bind, layer, ec, dim, valid_len);
  return z;
}

ad::Var regress(ad::Tape& tape, ad::Var z, const Binding& bind, const Mlp3Ids& ids) {
  const int t = tape.value(z).dim(0);
  ad::Var h1 = tape.gelu(tape.linear(z, bind[ids.w1], bind[ids.b1]));
  ad::Var h2 = tape.gelu(tape.linear(h1, bind[ids.w2], bind[ids.b2]));
  ad::Var s = tape.sigmoid(tape.linear(h2, bind[ids.w3], bind[ids.b3]));
  return tape.reshape(s, {t});
}

int top_k_of(int valid_len) {
  MMVD_CHECK(valid_len >= 1, ErrorCode::InvalidArgument, "top_k_of: valid_len ", valid_len);
  return valid_len / 16 + 1;
}

ad::Var mil_loss(ad::Tape& tape, ad::Var scores, int valid_len, int y, real eps) {
  MMVD_CHECK(y == 0 || y == 1, ErrorCode::InvalidArgument, "mil_loss: label ", y);
  ad::Var bag = tape.topk_mean(scores, top_k_of(valid_len), valid_len);
  return tape.bce(bag, static_cast<real>(y), eps);
}

}  // namespace mmvd::model
