#include "core/config.hpp"

#include <fstream>
#include <functional>
#include <vector>

#include "core/error.hpp"

using nlohmann::json;

namespace mmvd::cfg {

void EncoderConfig::validate() const {
  MMVD_CHECK(dim_audio >= 4 && dim_flow >= 4 && dim_rgb >= 4, ErrorCode::Config,
             "encoder dims too small");
  MMVD_CHECK(dim_rgb > dim_flow && dim_flow > dim_audio, ErrorCode::Config,
             "encoder dims must satisfy rgb > flow > audio, got ", dim_rgb, "/",
             dim_flow, "/", dim_audio);
  MMVD_CHECK(heads >= 2 && heads % 2 == 0, ErrorCode::Config,
             "encoder.heads must be even and >= 2, got ", heads);
  MMVD_CHECK(dim_rgb % heads == 0 && dim_flow % heads == 0 && dim_audio % heads == 0,
             ErrorCode::Config, "encoder.heads must divide every modality dim");
  MMVD_CHECK(layers >= 0, ErrorCode::Config, "encoder.layers must be >= 0");
  MMVD_CHECK(local_window >= 1 && local_window % 2 == 1, ErrorCode::Config,
             "encoder.local_window must be odd, got ", local_window);
  MMVD_CHECK(ffn_multiplier >= 1, ErrorCode::Config, "encoder.ffn_multiplier must be >= 1");
  MMVD_CHECK(conv_kernel >= 1 && conv_kernel % 2 == 1, ErrorCode::Config,
             "encoder.conv_kernel must be odd, got ", conv_kernel);
}

void TrainConfig::validate() const {
  MMVD_CHECK(iterations >= 0, ErrorCode::Config, "train.iterations must be >= 0");
  MMVD_CHECK(batch_size >= 1, ErrorCode::Config, "train.batch_size must be >= 1");
  MMVD_CHECK(batch_size >= 2 || ablate_triplet || lambda_triplet == 0, ErrorCode::Config,
             "train.batch_size must be >= 2 while the triplet term is active");
  MMVD_CHECK(t_train >= 16, ErrorCode::Config, "train.t_train must be >= 16");
  MMVD_CHECK(lr >= 0, ErrorCode::Config, "train.lr must be >= 0");
  MMVD_CHECK(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorCode::Config,
             "train.beta1/beta2 must be in [0,1)");
  MMVD_CHECK(weight_decay >= 0, ErrorCode::Config, "train.weight_decay must be >= 0");
  MMVD_CHECK(lambda_ma >= 0 && lambda_mmil >= 0 && lambda_triplet >= 0 && lambda_aux >= 0,
             ErrorCode::Config, "train loss weights must be >= 0");
  MMVD_CHECK(clamp_eps > 0 && clamp_eps < 0.5, ErrorCode::Config,
             "train.clamp_eps must be in (0,0.5)");
  MMVD_CHECK(triplet_margin >= 0, ErrorCode::Config, "train.triplet_margin must be >= 0");
  MMVD_CHECK(convergence_window >= 1, ErrorCode::Config,
             "train.convergence_window must be >= 1");
  MMVD_CHECK(k_search >= 0, ErrorCode::Config, "train.k_search must be >= 0");
  MMVD_CHECK(holdout_fraction >= 0 && holdout_fraction <= 0.9, ErrorCode::Config,
             "train.holdout_fraction must be in [0,0.9]");
  MMVD_CHECK(eval_every >= 0, ErrorCode::Config, "train.eval_every must be >= 0");
  MMVD_CHECK(frame_drop_rate >= 0 && frame_drop_rate < 1, ErrorCode::Config,
             "train.frame_drop_rate must be in [0,1)");
}

void config_validate(const Config& cfg) {
  cfg.gen.validate();
  cfg.encoder.validate();
  cfg.train.validate();
}

namespace {

void assign(int& dst, const json& v, const std::string& key) {
  MMVD_CHECK(v.is_number_integer(), ErrorCode::Config, key, ": expected integer, got ",
             v.dump());
  dst = v.get<int>();
}
void assign(uint64_t& dst, const json& v, const std::string& key) {
  MMVD_CHECK(v.is_number_integer() && v.get<int64_t>() >= 0, ErrorCode::Config, key,
             ": expected non-negative integer, got ", v.dump());
  dst = v.get<uint64_t>();
}
void assign(double& dst, const json& v, const std::string& key) {
  MMVD_CHECK(v.is_number(), ErrorCode::Config, key, ": expected number, got ", v.dump());
  dst = v.get<double>();
}
void assign(bool& dst, const json& v, const std::string& key) {
  MMVD_CHECK(v.is_boolean(), ErrorCode::Config, key, ": expected bool, got ", v.dump());
  dst = v.get<bool>();
}

struct Field {
  std::string key;
  std::function<void(Config&, const json&)> set;
  std::function<json(const Config&)> get;
};

#define MMVD_FIELD(KEY, MEMBER)                                                    \
  Field{KEY, [](Config& c, const json& v) { assign(c.MEMBER, v, KEY); },           \
        [](const Config& c) { return json(c.MEMBER); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      MMVD_FIELD("gen.seed", gen.seed),
      MMVD_FIELD("gen.n_bags", gen.n_bags),
      MMVD_FIELD("gen.anomaly_fraction", gen.anomaly_fraction),
      MMVD_FIELD("gen.t_min", gen.t_min),
      MMVD_FIELD("gen.t_max", gen.t_max),
      MMVD_FIELD("gen.dim_rgb", gen.dim_rgb),
      MMVD_FIELD("gen.dim_audio", gen.dim_audio),
      MMVD_FIELD("gen.dim_flow", gen.dim_flow),
      MMVD_FIELD("gen.latent_dim", gen.latent_dim),
      MMVD_FIELD("gen.latent_jitter", gen.latent_jitter),
      MMVD_FIELD("gen.seg_min", gen.seg_min),
      MMVD_FIELD("gen.seg_max", gen.seg_max),
      MMVD_FIELD("gen.events_min", gen.events_min),
      MMVD_FIELD("gen.events_max", gen.events_max),
      MMVD_FIELD("gen.amp_min", gen.amp_min),
      MMVD_FIELD("gen.amp_max", gen.amp_max),
      MMVD_FIELD("gen.signal_gain", gen.signal_gain),
      MMVD_FIELD("gen.noise_level", gen.noise_level),
      MMVD_FIELD("gen.audio_transient_prob", gen.audio_transient_prob),
      MMVD_FIELD("gen.audio_burst_gain", gen.audio_burst_gain),
      MMVD_FIELD("gen.audio_lag_min", gen.audio_lag_min),
      MMVD_FIELD("gen.audio_lag_max", gen.audio_lag_max),
      MMVD_FIELD("gen.flow_lag_min", gen.flow_lag_min),
      MMVD_FIELD("gen.flow_lag_max", gen.flow_lag_max),
      MMVD_FIELD("gen.rgb_signal_fraction", gen.rgb_signal_fraction),
      MMVD_FIELD("gen.audio_signal_fraction", gen.audio_signal_fraction),
      MMVD_FIELD("gen.flow_signal_fraction", gen.flow_signal_fraction),
      MMVD_FIELD("gen.distractor_prob", gen.distractor_prob),
      MMVD_FIELD("gen.distractor_len_min", gen.distractor_len_min),
      MMVD_FIELD("gen.distractor_len_max", gen.distractor_len_max),
      MMVD_FIELD("encoder.dim_rgb", encoder.dim_rgb),
      MMVD_FIELD("encoder.dim_flow", encoder.dim_flow),
      MMVD_FIELD("encoder.dim_audio", encoder.dim_audio),
      MMVD_FIELD("encoder.heads", encoder.heads),
      MMVD_FIELD("encoder.layers", encoder.layers),
      MMVD_FIELD("encoder.local_window", encoder.local_window),
      MMVD_FIELD("encoder.ffn_multiplier", encoder.ffn_multiplier),
      MMVD_FIELD("encoder.conv_kernel", encoder.conv_kernel),
      MMVD_FIELD("train.seed", train.seed),
      MMVD_FIELD("train.iterations", train.iterations),
      MMVD_FIELD("train.batch_size", train.batch_size),
      MMVD_FIELD("train.t_train", train.t_train),
      MMVD_FIELD("train.lr", train.lr),
      MMVD_FIELD("train.beta1", train.beta1),
      MMVD_FIELD("train.beta2", train.beta2),
      MMVD_FIELD("train.weight_decay", train.weight_decay),
      MMVD_FIELD("train.lambda_ma", train.lambda_ma),
      MMVD_FIELD("train.lambda_mmil", train.lambda_mmil),
      MMVD_FIELD("train.lambda_triplet", train.lambda_triplet),
      MMVD_FIELD("train.lambda_aux", train.lambda_aux),
      MMVD_FIELD("train.clamp_eps", train.clamp_eps),
      MMVD_FIELD("train.triplet_margin", train.triplet_margin),
      MMVD_FIELD("train.convergence_window", train.convergence_window),
      MMVD_FIELD("train.k_search", train.k_search),
      MMVD_FIELD("train.fixed_rgb", train.fixed_rgb),
      MMVD_FIELD("train.align_into_encoders", train.align_into_encoders),
      MMVD_FIELD("train.mfms_literal_gather", train.mfms_literal_gather),
      MMVD_FIELD("train.ablate_umil", train.ablate_umil),
      MMVD_FIELD("train.ablate_ma", train.ablate_ma),
      MMVD_FIELD("train.ablate_mmil", train.ablate_mmil),
      MMVD_FIELD("train.ablate_triplet", train.ablate_triplet),
      MMVD_FIELD("train.holdout_fraction", train.holdout_fraction),
      MMVD_FIELD("train.eval_every", train.eval_every),
      MMVD_FIELD("train.frame_drop_rate", train.frame_drop_rate),
  };
  return f;
}

#undef MMVD_FIELD

const Field* find_field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void flatten(const json& j, const std::string& prefix,
             std::vector<std::pair<std::string, json>>& out) {
  MMVD_CHECK(j.is_object(), ErrorCode::Config,
             prefix.empty() ? std::string("config root") : prefix,
             ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object())
      flatten(it.value(), key, out);
    else
      out.emplace_back(key, it.value());
  }
}

}  // namespace

void config_apply_json(Config& cfg, const json& j) {
  std::vector<std::pair<std::string, json>> flat;
  flatten(j, "", flat);
  for (const auto& [key, value] : flat) {
    const Field* f = find_field(key);
    MMVD_CHECK(f != nullptr, ErrorCode::Config, "unknown config key: ", key);
    f->set(cfg, value);
  }
}

void config_set(Config& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  MMVD_CHECK(f != nullptr, ErrorCode::Config, "unknown config key: ", key);
  json v = json::parse(value, nullptr, false);
  MMVD_CHECK(!v.is_discarded(), ErrorCode::Config, key, ": cannot parse value '", value,
             "'");
  f->set(cfg, v);
}

json config_to_json(const Config& cfg) {
  json out = json::object();
  for (const Field& f : fields()) {
    json* cur = &out;
    std::string rest = f.key;
    size_t dot;
    while ((dot = rest.find('.')) != std::string::npos) {
      cur = &(*cur)[rest.substr(0, dot)];
      rest = rest.substr(dot + 1);
    }
    (*cur)[rest] = f.get(cfg);
  }
  return out;
}

Config config_load_file(const std::string& path) {
  Config cfg;
  if (path.empty()) return cfg;
  std::ifstream f(path);
  MMVD_CHECK(f.good(), ErrorCode::Io, "cannot open config: ", path);
  json j = json::parse(f, nullptr, false);
  MMVD_CHECK(!j.is_discarded(), ErrorCode::Config, path, ": invalid JSON");
  config_apply_json(cfg, j);
  return cfg;
}

}  // namespace mmvd::cfg
