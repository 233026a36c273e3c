#pragma once

#include <string>

#include <json.hpp>

#include "core/datagen.hpp"

namespace mmvd::cfg {

/// Per-modality encoder geometry. The encoded dims are pinned to the
/// richest-first ordering rgb > flow > audio; validation enforces it.
struct EncoderConfig {
  int dim_rgb = 128;
  int dim_flow = 64;
  int dim_audio = 32;
  int heads = 4;         // even: half global, half locally banded
  int layers = 2;
  int local_window = 9;  // odd band width for the local heads
  int ffn_multiplier = 4;
  int conv_kernel = 3;
  void validate() const;
};

struct TrainConfig {
  uint64_t seed = 1;
  int iterations = 300;
  int batch_size = 16;
  int t_train = 64;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  double lambda_ma = 10.0;       // alignment group
  double lambda_mmil = 10.0;     // multimodal MIL
  double lambda_triplet = 0.001;
  double lambda_aux = 0.01;      // auxiliary MIL terms inside the alignment group
  double clamp_eps = 1e-6;
  double triplet_margin = 1.0;
  int convergence_window = 50;
  int k_search = 0;              // candidates per subspace search; 0 = primary dim
  bool fixed_rgb = true;         // alignment losses see RGB through stop-gradient
  bool align_into_encoders = true;  // off: alignment gradients stop at the projection input
  bool mfms_literal_gather = false;  // alternative sparsify reading, comparison only
  bool ablate_umil = false;
  bool ablate_ma = false;
  bool ablate_mmil = false;
  bool ablate_triplet = false;
  double holdout_fraction = 0.2;
  int eval_every = 50;           // 0 disables periodic eval
  double frame_drop_rate = 0.0;
  void validate() const;
};

struct Config {
  data::GenConfig gen;
  EncoderConfig encoder;
  TrainConfig train;
};

/// Applies a JSON document onto cfg. Accepts nested objects or flat dotted
/// keys; any key outside the schema is an error naming the key.
void config_apply_json(Config& cfg, const nlohmann::json& j);

/// Applies one dotted override, e.g. ("train.lr", "0.001").
void config_set(Config& cfg, const std::string& key, const std::string& value);

nlohmann::json config_to_json(const Config& cfg);

void config_validate(const Config& cfg);

/// Defaults, then the file (when path nonempty), no validation yet so
/// callers can layer overrides first.
Config config_load_file(const std::string& path);

}  // namespace mmvd::cfg
