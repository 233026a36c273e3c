#include "core/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "core/error.hpp"

using nlohmann::json;

namespace mmvd::data {

void GenConfig::validate() const {
  MMVD_CHECK(n_bags >= 2, ErrorCode::Config, "gen.n_bags must be >= 2, got ", n_bags);
  MMVD_CHECK(anomaly_fraction > 0.0 && anomaly_fraction < 1.0, ErrorCode::Config,
             "gen.anomaly_fraction must be in (0,1), got ", anomaly_fraction);
  MMVD_CHECK(t_min >= 24 && t_min <= t_max, ErrorCode::Config,
             "gen.t_min/t_max invalid: ", t_min, "/", t_max);
  MMVD_CHECK(dim_rgb >= 8 && dim_audio >= 8 && dim_flow >= 8, ErrorCode::Config,
             "gen dims too small");
  MMVD_CHECK(latent_dim >= 2, ErrorCode::Config, "gen.latent_dim must be >= 2");
  MMVD_CHECK(seg_min >= 4 && seg_min <= seg_max, ErrorCode::Config,
             "gen.seg_min/seg_max invalid: ", seg_min, "/", seg_max);
  MMVD_CHECK(events_min >= 1 && events_min <= events_max, ErrorCode::Config,
             "gen.events range invalid");
  MMVD_CHECK(amp_min > 0 && amp_min <= amp_max, ErrorCode::Config, "gen.amp range invalid");
  MMVD_CHECK(signal_gain > 0, ErrorCode::Config, "gen.signal_gain must be positive");
  MMVD_CHECK(noise_level >= 0, ErrorCode::Config, "gen.noise_level must be >= 0");
  MMVD_CHECK(audio_transient_prob > 0 && audio_transient_prob <= 1, ErrorCode::Config,
             "gen.audio_transient_prob must be in (0,1]");
  MMVD_CHECK(audio_lag_min >= 0 && audio_lag_min <= audio_lag_max, ErrorCode::Config,
             "gen.audio_lag range invalid");
  MMVD_CHECK(flow_lag_min >= 0 && flow_lag_min <= flow_lag_max, ErrorCode::Config,
             "gen.flow_lag range invalid");
  auto frac_ok = [](double f) { return f > 0.0 && f <= 1.0; };
  MMVD_CHECK(frac_ok(rgb_signal_fraction) && frac_ok(audio_signal_fraction) &&
                 frac_ok(flow_signal_fraction),
             ErrorCode::Config, "gen signal fractions must be in (0,1]");
  MMVD_CHECK(distractor_prob >= 0 && distractor_prob <= 1, ErrorCode::Config,
             "gen.distractor_prob must be in [0,1]");
  MMVD_CHECK(distractor_len_min >= 1 && distractor_len_min <= distractor_len_max,
             ErrorCode::Config, "gen.distractor_len range invalid");
  const int margin = audio_lag_max + 1;
  MMVD_CHECK(t_min >= seg_max + 2 * margin, ErrorCode::Config,
             "gen.t_min too small for seg_max plus lag margins");
}

namespace {

struct Mixer {
  std::vector<int> dims;            // which feature dims carry signal
  std::vector<double> w;            // |dims| x latent mixing weights
  int latent = 0;
  // out[i] = dot(w_i, u)
  void apply(const std::vector<double>& u, std::vector<double>& out) const {
    out.assign(dims.size(), 0.0);
    for (size_t i = 0; i < dims.size(); ++i) {
      const double* wi = w.data() + i * static_cast<size_t>(latent);
      double s = 0;
      for (int l = 0; l < latent; ++l) s += wi[l] * u[static_cast<size_t>(l)];
      out[i] = s;
    }
  }
};

Mixer make_mixer(int dim, double fraction, int latent, Rng& rng) {
  Mixer m;
  m.latent = latent;
  int n = std::max(2, static_cast<int>(std::lround(dim * fraction)));
  n = std::min(n, dim);
  std::vector<int> all(static_cast<size_t>(dim));
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(all);
  m.dims.assign(all.begin(), all.begin() + n);
  std::sort(m.dims.begin(), m.dims.end());
  const double scale = 1.0 / std::sqrt(static_cast<double>(latent));
  m.w.resize(static_cast<size_t>(n) * static_cast<size_t>(latent));
  for (double& v : m.w) v = rng.normal() * scale;
  return m;
}

std::vector<double> unit_latent(int latent, Rng& rng) {
  std::vector<double> u(static_cast<size_t>(latent));
  double n2 = 0;
  for (double& v : u) {
    v = rng.normal();
    n2 += v * v;
  }
  double n = std::sqrt(n2);
  if (n < 1e-12) {
    u.assign(static_cast<size_t>(latent), 0.0);
    u[0] = 1.0;
    return u;
  }
  for (double& v : u) v /= n;
  return u;
}

std::vector<double> jittered(const std::vector<double>& proto, double jitter, Rng& rng) {
  std::vector<double> u(proto.size());
  double n2 = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    u[i] = proto[i] + jitter * rng.normal();
    n2 += u[i] * u[i];
  }
  double n = std::sqrt(n2);
  if (n < 1e-12) return proto;
  for (double& v : u) v /= n;
  return u;
}

void add_segment(Tensor& feat, const Mixer& mix, const std::vector<double>& u,
                 int start, int len, double amp, Rng& rng,
                 std::vector<double>* evidence, double gain = 1.0) {
  std::vector<double> delta;
  mix.apply(u, delta);
  const int T = feat.rows();
  for (int t = start; t < start + len; ++t) {
    if (t < 0 || t >= T) continue;
    const double a = amp * gain * (0.8 + 0.4 * rng.uniform());  // mild modulation
    for (size_t i = 0; i < mix.dims.size(); ++i)
      feat.at(t, mix.dims[i]) += static_cast<real>(a * delta[i]);
    if (evidence) (*evidence)[static_cast<size_t>(t)] += a;
  }
}

}  // namespace

std::string gen_config_to_json(const GenConfig& c) {
  json j = {
      {"seed", c.seed},
      {"n_bags", c.n_bags},
      {"anomaly_fraction", c.anomaly_fraction},
      {"t_min", c.t_min},
      {"t_max", c.t_max},
      {"dim_rgb", c.dim_rgb},
      {"dim_audio", c.dim_audio},
      {"dim_flow", c.dim_flow},
      {"latent_dim", c.latent_dim},
      {"latent_jitter", c.latent_jitter},
      {"seg_min", c.seg_min},
      {"seg_max", c.seg_max},
      {"events_min", c.events_min},
      {"events_max", c.events_max},
      {"amp_min", c.amp_min},
      {"amp_max", c.amp_max},
      {"signal_gain", c.signal_gain},
      {"noise_level", c.noise_level},
      {"audio_transient_prob", c.audio_transient_prob},
      {"audio_burst_gain", c.audio_burst_gain},
      {"audio_lag_min", c.audio_lag_min},
      {"audio_lag_max", c.audio_lag_max},
      {"flow_lag_min", c.flow_lag_min},
      {"flow_lag_max", c.flow_lag_max},
      {"rgb_signal_fraction", c.rgb_signal_fraction},
      {"audio_signal_fraction", c.audio_signal_fraction},
      {"flow_signal_fraction", c.flow_signal_fraction},
      {"distractor_prob", c.distractor_prob},
      {"distractor_len_min", c.distractor_len_min},
      {"distractor_len_max", c.distractor_len_max},
  };
  return j.dump(2);
}

Dataset generate_dataset(const GenConfig& cfg, std::vector<GenDebug>* debug) {
  cfg.validate();
  Rng master(cfg.seed);

  // dataset level structure: mixing subspaces and the event prototype
  Rng srng = master.child(0x5717);
  Mixer mix_rgb = make_mixer(cfg.dim_rgb, cfg.rgb_signal_fraction, cfg.latent_dim, srng);
  Mixer mix_audio = make_mixer(cfg.dim_audio, cfg.audio_signal_fraction, cfg.latent_dim, srng);
  Mixer mix_flow = make_mixer(cfg.dim_flow, cfg.flow_signal_fraction, cfg.latent_dim, srng);
  const std::vector<double> proto = unit_latent(cfg.latent_dim, srng);

  // class assignment
  const int n_anom = std::max(
      1, std::min(cfg.n_bags - 1,
                  static_cast<int>(std::lround(cfg.n_bags * cfg.anomaly_fraction))));
  std::vector<int> order(static_cast<size_t>(cfg.n_bags));
  std::iota(order.begin(), order.end(), 0);
  Rng crng = master.child(0xC1A55);
  crng.shuffle(order);
  std::vector<uint8_t> is_anom(static_cast<size_t>(cfg.n_bags), 0);
  for (int i = 0; i < n_anom; ++i) is_anom[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;

  Dataset ds;
  ds.dim_rgb = cfg.dim_rgb;
  ds.dim_audio = cfg.dim_audio;
  ds.dim_flow = cfg.dim_flow;
  ds.gen_config_json = gen_config_to_json(cfg);
  if (debug) debug->clear();

  const int margin = cfg.audio_lag_max + 1;
  for (int bi = 0; bi < cfg.n_bags; ++bi) {
    Rng rng = master.child(0xBA6000 + static_cast<uint64_t>(bi));
    Bag bag;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "bag_%04d", bi);
    bag.id = idbuf;
    const int T = rng.uniform_int(cfg.t_min, cfg.t_max);
    bag.rgb = Tensor({T, cfg.dim_rgb});
    bag.audio = Tensor({T, cfg.dim_audio});
    bag.flow = Tensor({T, cfg.dim_flow});
    bag.frame_labels.assign(static_cast<size_t>(T), 0);
    for (size_t i = 0; i < bag.rgb.size(); ++i)
      bag.rgb[i] = static_cast<real>(cfg.noise_level * rng.normal());
    for (size_t i = 0; i < bag.audio.size(); ++i)
      bag.audio[i] = static_cast<real>(cfg.noise_level * rng.normal());
    for (size_t i = 0; i < bag.flow.size(); ++i)
      bag.flow[i] = static_cast<real>(cfg.noise_level * rng.normal());

    GenDebug dbg;
    dbg.ev_rgb.assign(static_cast<size_t>(T), 0.0);
    dbg.ev_audio.assign(static_cast<size_t>(T), 0.0);
    dbg.ev_flow.assign(static_cast<size_t>(T), 0.0);

    if (is_anom[static_cast<size_t>(bi)]) {
      const int n_events = rng.uniform_int(cfg.events_min, cfg.events_max);
      std::vector<std::pair<int, int>> placed;  // [start, end)
      for (int e = 0; e < n_events; ++e) {
        int len = rng.uniform_int(cfg.seg_min, cfg.seg_max);
        len = std::min(len, T - 2 * margin);
        if (len < cfg.seg_min && e > 0) break;  // bag too short for another event
        int start = -1;
        for (int attempt = 0; attempt < 24; ++attempt) {
          int s = rng.uniform_int(margin, T - len - margin);
          bool clash = false;
          for (auto [ps, pe] : placed)
            if (s < pe + 2 && s + len > ps - 2) clash = true;
          if (!clash) {
            start = s;
            break;
          }
        }
        if (start < 0) continue;  // crowded bag, drop this event
        placed.emplace_back(start, start + len);

        PlantedEvent ev;
        ev.start = start;
        ev.len = len;
        ev.lag_audio = rng.uniform_int(cfg.audio_lag_min, cfg.audio_lag_max);
        ev.lag_flow = rng.uniform_int(cfg.flow_lag_min, cfg.flow_lag_max);
        const double amp = cfg.signal_gain * rng.uniform(cfg.amp_min, cfg.amp_max);
        const std::vector<double> u = jittered(proto, cfg.latent_jitter, rng);

        add_segment(bag.rgb, mix_rgb, u, start, len, amp, rng, &dbg.ev_rgb);
        add_segment(bag.flow, mix_flow, u, start + ev.lag_flow, len, amp, rng, &dbg.ev_flow);
        // audio: sparse transient bursts inside the lagged window
        std::vector<int> bursts;
        for (int t = start + ev.lag_audio; t < start + ev.lag_audio + len; ++t)
          if (t >= 0 && t < T && rng.uniform() < cfg.audio_transient_prob)
            bursts.push_back(t);
        if (bursts.size() < 2) {
          bursts.clear();
          bursts.push_back(std::min(T - 1, start + ev.lag_audio));
          bursts.push_back(std::min(T - 1, start + ev.lag_audio + len / 2));
        }
        for (int t : bursts)
          add_segment(bag.audio, mix_audio, u, t, 1, amp, rng, &dbg.ev_audio,
                      cfg.audio_burst_gain);
        ev.burst_frames = bursts;
        dbg.events.push_back(std::move(ev));

        for (int t = start; t < start + len; ++t)
          bag.frame_labels[static_cast<size_t>(t)] = 1;
      }
      // degenerate placement can drop every event; keep labels truthful by
      // forcing one minimal event at the front in that case
      if (dbg.events.empty()) {
        int len = std::min(cfg.seg_min, T - 2 * margin);
        int start = margin;
        PlantedEvent ev;
        ev.start = start;
        ev.len = len;
        ev.lag_audio = cfg.audio_lag_min;
        ev.lag_flow = cfg.flow_lag_min;
        const double amp = cfg.signal_gain * cfg.amp_max;
        const std::vector<double> u = jittered(proto, cfg.latent_jitter, rng);
        add_segment(bag.rgb, mix_rgb, u, start, len, amp, rng, &dbg.ev_rgb);
        add_segment(bag.flow, mix_flow, u, start + ev.lag_flow, len, amp, rng, &dbg.ev_flow);
        ev.burst_frames = {start + ev.lag_audio, start + ev.lag_audio + len / 2};
        for (int t : ev.burst_frames)
          add_segment(bag.audio, mix_audio, u, t, 1, amp, rng, &dbg.ev_audio,
                      cfg.audio_burst_gain);
        dbg.events.push_back(std::move(ev));
        for (int t = start; t < start + len; ++t)
          bag.frame_labels[static_cast<size_t>(t)] = 1;
      }
      bag.y = 1;
    }

    // single modality distractors, both classes. Drawn from the same latent
    // distribution as events so they are not separable inside one modality.
    for (int kind = 0; kind < 3; ++kind) {
      if (rng.uniform() >= cfg.distractor_prob) continue;
      int len = rng.uniform_int(cfg.distractor_len_min, cfg.distractor_len_max);
      len = std::min(len, T);
      const int start = rng.uniform_int(0, T - len);
      const double amp = cfg.signal_gain * rng.uniform(cfg.amp_min, cfg.amp_max);
      const std::vector<double> u = jittered(proto, cfg.latent_jitter, rng);
      PlantedDistractor d;
      d.start = start;
      d.len = len;
      if (kind == 0) {
        d.kind = PlantedDistractor::Rgb;
        add_segment(bag.rgb, mix_rgb, u, start, len, amp, rng, &dbg.ev_rgb);
      } else if (kind == 1) {
        d.kind = PlantedDistractor::Audio;
        const int n_bursts = std::min(len, rng.uniform_int(1, 2));
        for (int bgi = 0; bgi < n_bursts; ++bgi) {
          int t = start + (len > 1 ? rng.uniform_int(0, len - 1) : 0);
          add_segment(bag.audio, mix_audio, u, t, 1, amp, rng, &dbg.ev_audio,
                      cfg.audio_burst_gain);
        }
      } else {
        d.kind = PlantedDistractor::Flow;
        add_segment(bag.flow, mix_flow, u, start, len, amp, rng, &dbg.ev_flow);
      }
      dbg.distractors.push_back(d);
    }

    round_to_f32(bag.rgb);
    round_to_f32(bag.audio);
    round_to_f32(bag.flow);
    if (debug) debug->push_back(std::move(dbg));
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

}  // namespace mmvd::data
