#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/config.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace mmvd::model {

/// Named parameter registry. Ids are dense and stable for the life of the
/// store, which is what the optimizer state and checkpoints key on.
class ParamStore {
 public:
  int add(const std::string& name, Tensor init);
  int find(const std::string& name) const;  // -1 when absent
  Tensor& value(int id);
  const Tensor& value(int id) const;
  const std::string& name(int id) const;
  int count() const { return static_cast<int>(values_.size()); }
  size_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, int> index_;
};

/// Binds every parameter onto a tape as a requires-grad leaf. Index by
/// parameter id.
struct Binding {
  std::vector<ad::Var> vars;
  ad::Var operator[](int pid) const { return vars[static_cast<size_t>(pid)]; }
};

Binding bind_params(ad::Tape& tape, const ParamStore& store, bool requires_grad = true);

struct ModelDims {
  int raw_rgb = 0, raw_audio = 0, raw_flow = 0;
};

// parameter id bundles per architectural block
struct ConvIds {
  int w = -1, b = -1;
};
struct AttnIds {
  int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
};
struct LnIds {
  int g = -1, b = -1;
};
struct FfnIds {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
struct LayerIds {
  AttnIds attn;
  LnIds ln1;
  FfnIds ffn;
  LnIds ln2;
};
struct EncoderIds {
  ConvIds conv;
  std::vector<LayerIds> layers;
};
struct Mlp3Ids {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;
};
struct FusionIds {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;  // concat dim -> mid -> out
  std::array<ConvIds, 3> tcn;              // dilations 1, 2, 4
};

/// The full parameter set: three unimodal encoders with regressors, two
/// residual projections into the RGB width, the fusion stack and its
/// regressor. The projection regressors reuse the unimodal regressor ids on
/// purpose; the auxiliary scoring path shares those parameters.
struct ModelParams {
  ParamStore store;
  ModelDims dims;
  cfg::EncoderConfig enc_cfg;
  EncoderIds enc_rgb, enc_audio, enc_flow;
  Mlp3Ids reg_rgb, reg_audio, reg_flow;
  Mlp3Ids proj_audio, proj_flow;
  FusionIds fusion;
  Mlp3Ids reg_fused;

  int fused_in_dim() const {
    return enc_cfg.dim_audio + enc_cfg.dim_rgb + enc_cfg.dim_flow;
  }
  static ModelParams build(const ModelDims& dims, const cfg::EncoderConfig& ec, Rng rng);
};

/// Checkpoint container: a name/shape index followed by one f32 feature
/// block per parameter, little endian throughout. Values round-trip at f32
/// granularity.
void save_params(const ParamStore& store, const std::string& path);
void load_params(ParamStore& store, const std::string& path);

}  // namespace mmvd::model
