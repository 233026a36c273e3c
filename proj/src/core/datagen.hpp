#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/feature_io.hpp"
#include "core/rng.hpp"

namespace mmvd::data {

/// Synthetic multimodal bag generator. Each anomalous bag gets one or more
/// planted segments driven by a shared latent event vector: dense in RGB,
/// dense but lagged in flow, sparse transient bursts in audio. All bags may
/// additionally get single-modality benign distractors drawn from the same
/// latent distribution, which caps what any one modality can resolve and is
/// what makes fusion pay off.
struct GenConfig {
  uint64_t seed = 7;
  int n_bags = 240;
  double anomaly_fraction = 0.5;
  int t_min = 48, t_max = 96;
  int dim_rgb = 1024, dim_audio = 128, dim_flow = 1024;

  int latent_dim = 8;
  double latent_jitter = 0.35;  // event direction spread around the dataset prototype
  int seg_min = 12, seg_max = 24;
  int events_min = 1, events_max = 2;
  double amp_min = 2.0, amp_max = 3.0;
  double signal_gain = 1.0;  // scales every planted amplitude
  double noise_level = 1.0;

  double audio_transient_prob = 0.45;  // per in-segment step
  double audio_burst_gain = 1.5;
  int audio_lag_min = 2, audio_lag_max = 3;
  int flow_lag_min = 0, flow_lag_max = 1;

  // fraction of each modality's dims that carry planted structure
  double rgb_signal_fraction = 0.5;
  double audio_signal_fraction = 0.15;
  double flow_signal_fraction = 0.25;

  // per bag, per kind; each distractor pollutes exactly one modality
  double distractor_prob = 0.5;
  int distractor_len_min = 3, distractor_len_max = 7;

  void validate() const;
};

struct PlantedEvent {
  int start = 0, len = 0;
  int lag_audio = 0, lag_flow = 0;
  std::vector<int> burst_frames;  // absolute frame indices, audio side
};

struct PlantedDistractor {
  enum Kind { Rgb, Audio, Flow };
  Kind kind = Rgb;
  int start = 0, len = 0;
};

/// Per-bag evidence record kept out of the dataset itself; tests use it as
/// ground truth for lag and energy checks.
struct GenDebug {
  std::vector<PlantedEvent> events;
  std::vector<PlantedDistractor> distractors;
  // planted amplitude per frame and modality, distractors included
  std::vector<double> ev_rgb, ev_audio, ev_flow;
};

Dataset generate_dataset(const GenConfig& cfg, std::vector<GenDebug>* debug = nullptr);

std::string gen_config_to_json(const GenConfig& cfg);

}  // namespace mmvd::data
